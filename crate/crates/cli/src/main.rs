//! `dgst`: train, apply and evaluate dual-generator style transferrers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use log::info;

use dgst_core::corpus::{load_lines, Vocab};
use dgst_core::editops::{neighbourhood_draw, NoiseSpec};
use dgst_core::eval::{Direction, EvalInputs};
use dgst_core::trainer::{
    ablation_table, load_checkpoint, make_synthetic_corpus, run_ablation, RunPaths, SyntheticSpec, KEYS,
};
use dgst_core::{evaluate_system, train_classifier, train_dgst, Error, RngState, StyleData, TrainConfig};

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e => Failure::Core(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let defaults = TrainConfig::default();
    let mut cmd = Command::new("dgst")
        .about("Dual-generator text style transfer")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("`key = value` config file; flags override its values"),
        );
    for (key, desc) in KEYS {
        let default = defaults.get(key).expect("every listed key is readable");
        let shown = if default.is_empty() { "\"\"".to_string() } else { default };
        cmd = cmd.arg(
            Arg::new(*key)
                .long(flag_name(key))
                .global(true)
                .value_name("VALUE")
                .help_heading("Config")
                .help(format!("{desc} [default: {shown}]")),
        );
    }

    let checkpoint = || {
        Arg::new("checkpoint")
            .long("checkpoint")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
    };
    let vocab = || {
        Arg::new("vocab")
            .long("vocab")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("vocabulary file [default: <out_dir>/vocab.txt]")
    };
    let report = || {
        Arg::new("report")
            .long("report")
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("also write the report as key<TAB>value lines")
    };
    cmd.subcommand(Command::new("train").about("Train f and g on <data_dir>, then score them on the test splits"))
        .subcommand(
            Command::new("transfer")
                .about("Transfer one sentence per line")
                .arg(checkpoint().required(true).help("checkpoint holding f and g"))
                .arg(vocab())
                .arg(
                    Arg::new("direction")
                        .long("direction")
                        .required(true)
                        .value_parser(["x2y", "y2x"])
                        .help("x2y applies f, y2x applies g"),
                )
                .arg(
                    Arg::new("input")
                        .long("input")
                        .required(true)
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("output")
                        .long("output")
                        .value_name("FILE")
                        .value_parser(value_parser!(PathBuf))
                        .help("output file [default: stdout]"),
                ),
        )
        .subcommand(
            Command::new("evaluate")
                .about("Score a checkpoint on the test splits of <data_dir>")
                .arg(checkpoint().help("checkpoint [default: <out_dir>/best.ckpt]"))
                .arg(vocab())
                .arg(report()),
        )
        .subcommand(
            Command::new("ablate")
                .about("Train and score every training variant with the same seed")
                .arg(report()),
        )
        .subcommand(
            Command::new("noise-demo")
                .about("Print neighbourhood samples of a sentence at noise intensity <gamma_initial>")
                .arg(
                    Arg::new("samples")
                        .long("samples")
                        .default_value("5")
                        .value_parser(value_parser!(usize)),
                )
                .arg(vocab().help("vocabulary for inserted tokens [default: the sentence's own words]"))
                .arg(Arg::new("sentence").required(true).num_args(1..).action(ArgAction::Append)),
        )
        .subcommand(
            Command::new("make-synthetic")
                .about("Write the synthetic marker corpus in the corpus directory layout")
                .arg(
                    Arg::new("output")
                        .long("output")
                        .required(true)
                        .value_name("DIR")
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(count_arg("n-train", SyntheticSpec::default().n_train))
                .arg(count_arg("n-dev", SyntheticSpec::default().n_dev))
                .arg(count_arg("n-test", SyntheticSpec::default().n_test))
                .arg(count_arg("content-vocab", SyntheticSpec::default().content_vocab))
                .arg(count_arg("branching", SyntheticSpec::default().branching)),
        )
}

fn count_arg(name: &'static str, default: usize) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("N")
        .default_value(default.to_string())
        .value_parser(value_parser!(usize))
}

fn config_from(m: &ArgMatches) -> CliResult<TrainConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::Core(Error::Io { path: p.clone(), source: e })),
        None => {
            io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Core(Error::Io { path: PathBuf::from("<stdout>"), source: e }))
        }
    }
}

fn read_checkpoint(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn out_file(cfg: &TrainConfig, m: &ArgMatches, arg: &str, name: &str) -> CliResult<PathBuf> {
    if let Some(p) = m.get_one::<PathBuf>(arg) {
        return Ok(p.clone());
    }
    if cfg.out_dir.is_empty() {
        return Err(Failure::Usage(format!("--{arg} is required when out_dir is empty")));
    }
    Ok(Path::new(&cfg.out_dir).join(name))
}

fn cmd_train(cfg: &TrainConfig) -> CliResult<()> {
    let data = StyleData::load_dir(Path::new(&cfg.data_dir), cfg.min_freq, cfg.max_vocab)?;
    info!("vocabulary: {} tokens", data.vocab.len());
    let classifier = train_classifier(&data.x.train, &data.y.train, &cfg.classifier())?;
    let out = train_dgst(cfg, &data, &classifier)?;
    let (report, _) = evaluate_system(&out.f, &out.g, &EvalInputs::from_test(&data), Some(&classifier), &cfg.generation())?;
    print!("{}", report.table());
    if let Some(paths) = RunPaths::from_config(cfg) {
        let p = paths.out_dir.join("report.tsv");
        write_output(Some(&p), &report.to_tsv())?;
    }
    Ok(())
}

fn cmd_transfer(cfg: &TrainConfig, m: &ArgMatches) -> CliResult<()> {
    let vocab = Vocab::load(&out_file(cfg, m, "vocab", "vocab.txt")?)?;
    let (f, g) = load_checkpoint(&read_checkpoint(m.get_one::<PathBuf>("checkpoint").expect("required"))?)?;
    let direction = Direction::parse(m.get_one::<String>("direction").expect("required")).expect("validated by clap");
    let model = match direction {
        Direction::XToY => f,
        Direction::YToX => g,
    };
    model.check_vocab(&vocab)?;
    let lines = load_lines(m.get_one::<PathBuf>("input").expect("required"))?;
    let inputs: Vec<_> = lines.iter().map(|l| vocab.encode(l)).collect();
    let outputs = model.transfer_all(&inputs, &cfg.generation(), cfg.batch_size)?;
    let mut text = String::new();
    for s in &outputs {
        text.push_str(&vocab.decode(s)?);
        text.push('\n');
    }
    write_output(m.get_one::<PathBuf>("output"), &text)
}

fn cmd_evaluate(cfg: &TrainConfig, m: &ArgMatches) -> CliResult<()> {
    let vocab = Vocab::load(&out_file(cfg, m, "vocab", "vocab.txt")?)?;
    let (f, g) = load_checkpoint(&read_checkpoint(&out_file(cfg, m, "checkpoint", "best.ckpt")?)?)?;
    f.check_vocab(&vocab)?;
    g.check_vocab(&vocab)?;
    let data = StyleData::load_with_vocab(Path::new(&cfg.data_dir), vocab)?;
    let classifier = train_classifier(&data.x.train, &data.y.train, &cfg.classifier())?;
    let (report, _) = evaluate_system(&f, &g, &EvalInputs::from_test(&data), Some(&classifier), &cfg.generation())?;
    print!("{}", report.table());
    if let Some(p) = m.get_one::<PathBuf>("report") {
        write_output(Some(p), &report.to_tsv())?;
    }
    Ok(())
}

fn cmd_ablate(cfg: &TrainConfig, m: &ArgMatches) -> CliResult<()> {
    let data = StyleData::load_dir(Path::new(&cfg.data_dir), cfg.min_freq, cfg.max_vocab)?;
    let classifier = train_classifier(&data.x.train, &data.y.train, &cfg.classifier())?;
    let rows = run_ablation(cfg, &data, &classifier)?;
    print!("{}", ablation_table(&rows));
    if let Some(p) = m.get_one::<PathBuf>("report") {
        let mut tsv = String::from("variant\tself_bleu\tacc\n");
        for r in &rows {
            tsv.push_str(&format!(
                "{}\t{}\t{}\n",
                r.variant,
                r.report.average.self_bleu,
                r.report.average.accuracy
            ));
        }
        write_output(Some(p), &tsv)?;
    }
    Ok(())
}

fn cmd_noise_demo(cfg: &TrainConfig, m: &ArgMatches) -> CliResult<()> {
    let sentence: Vec<&str> = m
        .get_many::<String>("sentence")
        .expect("required")
        .flat_map(|s| s.split_whitespace())
        .collect();
    let vocab = match m.get_one::<PathBuf>("vocab") {
        Some(p) => Vocab::load(p)?,
        None => Vocab::from_tokens(sentence.iter().copied()),
    };
    let s = vocab.encode(&sentence.join(" "));
    if s.is_empty() {
        return Err(Failure::Usage("the sentence has no words".into()));
    }
    let spec = NoiseSpec::new(cfg.gamma_initial);
    spec.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let mut text = format!("gamma = {}  sigma = {:.4}\n", spec.gamma, spec.sigma());
    for _ in 0..*m.get_one::<usize>("samples").expect("has default") {
        let n = neighbourhood_draw(&s, &spec, &vocab, &mut rng)?;
        text.push_str(&format!("m={:.3}  edits={:<3} {}\n", n.fraction, n.edits, vocab.decode(&n.sentence)?));
    }
    write_output(None, &text)
}

fn cmd_make_synthetic(cfg: &TrainConfig, m: &ArgMatches) -> CliResult<()> {
    let count = |k: &str| *m.get_one::<usize>(k).expect("has default");
    let spec = SyntheticSpec {
        n_train: count("n-train"),
        n_dev: count("n-dev"),
        n_test: count("n-test"),
        content_vocab: count("content-vocab"),
        branching: count("branching"),
        seed: cfg.seed,
        ..SyntheticSpec::default()
    };
    let corpus = make_synthetic_corpus(&spec)?;
    let dir = m.get_one::<PathBuf>("output").expect("required");
    corpus.write_dir(dir)?;
    info!("wrote synthetic corpus to {}", dir.display());
    Ok(())
}

fn run(m: &ArgMatches) -> CliResult<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = config_from(sub)?;
    match name {
        "train" => cmd_train(&cfg),
        "transfer" => cmd_transfer(&cfg, sub),
        "evaluate" => cmd_evaluate(&cfg, sub),
        "ablate" => cmd_ablate(&cfg, sub),
        "noise-demo" => cmd_noise_demo(&cfg, sub),
        "make-synthetic" => cmd_make_synthetic(&cfg, sub),
        _ => unreachable!("clap rejects unknown subcommands"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        cli().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.txt");
        fs::write(&file, "epochs = 7\ngamma_switch_epoch = 3\nlr = 0.5\n").unwrap();
        let m = cli()
            .try_get_matches_from(["dgst", "--config", file.to_str().unwrap(), "--lr", "0.25", "train"])
            .unwrap();
        let cfg = config_from(m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.25);
    }

    #[test]
    fn every_key_has_a_flag() {
        let help = cli().render_long_help().to_string();
        for (key, _) in KEYS {
            assert!(help.contains(&format!("--{}", flag_name(key))), "{key}");
        }
    }
}
