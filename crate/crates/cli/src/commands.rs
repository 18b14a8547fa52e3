//! The subcommands. Each one stages its files in an [`OutputSet`] and commits them only when
//! everything succeeded.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fieldreg::fem::{generate_dataset_with_stats, FemPredictor, InputSampler, NoiseScheme};
use fieldreg::nn::{read_checkpoint, Network};
use fieldreg::train::{history_csv, r_squared, rmse, HistoryRow, Surrogate, Trainer};
use fieldreg::uq::{error_map, pdf_csv, run_uq, to_pgm, PdfOverlay, Predictor, UqResult};
use fieldreg::{Dataset, Field, FormatError};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::OutputSet;

/// What a command reports on stdout: a short human line and `key=value` metrics.
#[derive(Debug, Default)]
pub struct Summary {
    pub human: String,
    pub metrics: Vec<(&'static str, String)>,
}

impl Summary {
    pub fn metrics_line(&self) -> String {
        self.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PredictorKind {
    Surrogate,
    Fem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Reference {
    None,
    Fem,
}

/// A loaded config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Run {
    pub fn new(cfg: RunConfig, out: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Self {
        let out_dir = out
            .or_else(|| cfg.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Run { cfg, out_dir, checkpoint }
    }

    pub fn train_path(&self) -> PathBuf {
        self.cfg.paths.train_data.clone().unwrap_or_else(|| self.out_dir.join("train.frds"))
    }

    pub fn test_path(&self) -> PathBuf {
        self.cfg.paths.test_data.clone().unwrap_or_else(|| self.out_dir.join("test.frds"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .or_else(|| self.cfg.paths.checkpoint.clone())
            .unwrap_or_else(|| self.out_dir.join("model.frm1"))
    }

    fn manifest(&self, command: &str, started: Instant, details: serde_json::Value) -> String {
        let m = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "wall_time_s": started.elapsed().as_secs_f64(),
            "config": self.cfg,
            "details": details,
        });
        serde_json::to_string_pretty(&m).expect("manifest serializes") + "\n"
    }

    fn read_dataset(&self, path: &Path, what: &str) -> Result<Dataset, CliError> {
        let ds = Dataset::read(path).map_err(CliError::context(format!("reading {what} set {}", path.display())))?;
        let (n, case) = (self.cfg.grid_n, self.cfg.case);
        let want = ((n, n, case.in_channels()), (n, n, case.out_channels()));
        if (ds.input_shape(), ds.output_shape()) != want {
            return Err(CliError::Config(format!(
                "{what} set {} maps {:?} -> {:?}, case {} on grid {n} needs {:?} -> {:?}",
                path.display(),
                ds.input_shape(),
                ds.output_shape(),
                case.name(),
                want.0,
                want.1
            )));
        }
        Ok(ds)
    }

    /// The trained surrogate, checked against the configured network.
    fn load_surrogate(&self) -> Result<Surrogate, CliError> {
        let path = self.checkpoint_path();
        let ck = read_checkpoint(&path).map_err(CliError::context(format!("reading checkpoint {}", path.display())))?;
        ck.check_spec(&self.cfg.network_spec()?)
            .map_err(CliError::context(format!("checkpoint {}", path.display())))?;
        Ok(Surrogate::from_checkpoint(&ck)?.0)
    }

    fn predictor(&self, kind: PredictorKind) -> Result<Box<dyn Predictor>, CliError> {
        Ok(match kind {
            PredictorKind::Surrogate => Box::new(self.load_surrogate()?),
            PredictorKind::Fem => Box::new(FemPredictor::from_spec(&self.cfg.case_spec())),
        })
    }

    fn channel_names(&self) -> &'static [&'static str] {
        self.cfg.case.output_names()
    }
}

pub fn gen_data(run: &Run) -> Result<Summary, CliError> {
    let started = Instant::now();
    let cfg = &run.cfg;
    let spec = cfg.case_spec();
    let (train, train_res) = generate_dataset_with_stats(
        &spec,
        cfg.data.n_train,
        cfg.stage_seed("train-data"),
        NoiseScheme::Lhs,
    )
    .map_err(CliError::context("generating the training set"))?;
    let (test, test_res) = generate_dataset_with_stats(
        &spec,
        cfg.data.n_test,
        cfg.stage_seed("test-data"),
        NoiseScheme::Independent,
    )
    .map_err(CliError::context("generating the test set"))?;
    let residual_max = train_res.max.max(test_res.max);
    let details = json!({
        "n_train": train.len(),
        "n_test": test.len(),
        "residual": {
            "train": {"max": train_res.max, "mean": train_res.mean},
            "test": {"max": test_res.max, "mean": test_res.mean},
        },
    });
    let mut out = OutputSet::new();
    out.write(run.train_path(), train.to_bytes())?;
    out.write(run.test_path(), test.to_bytes())?;
    out.write(run.out_dir.join("gen-data.manifest.json"), run.manifest("gen-data", started, details))?;
    out.commit()?;
    Ok(Summary {
        human: format!(
            "wrote {} training and {} test samples ({}) to {}",
            train.len(),
            test.len(),
            cfg.case.name(),
            run.out_dir.display()
        ),
        metrics: vec![
            ("n_train", train.len().to_string()),
            ("n_test", test.len().to_string()),
            ("residual_max", format!("{residual_max:e}")),
        ],
    })
}

pub fn train(run: &Run, resume: bool) -> Result<Summary, CliError> {
    let started = Instant::now();
    let cfg = &run.cfg;
    let spec = cfg.network_spec()?;
    let train = run.read_dataset(&run.train_path(), "training")?;
    let test = run.read_dataset(&run.test_path(), "test")?;
    let tcfg = cfg.train_config();
    let history_path = run.out_dir.join("history.csv");
    let (mut trainer, mut history) = if resume {
        let path = run.checkpoint_path();
        let ck = read_checkpoint(&path).map_err(CliError::context(format!("reading checkpoint {}", path.display())))?;
        ck.check_spec(&spec)
            .map_err(CliError::context(format!("checkpoint {}", path.display())))?;
        let (surrogate, state) = Surrogate::from_checkpoint(&ck)?;
        let state = state.ok_or_else(|| {
            CliError::Config(format!("checkpoint {} holds no optimizer state to resume from", path.display()))
        })?;
        let previous = match std::fs::read_to_string(&history_path) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => history_csv(&[]),
            Err(e) => return Err(CliError::io(&history_path, e)),
        };
        (Trainer::resume(surrogate, state, tcfg)?, previous)
    } else {
        let net = Network::new(spec)?;
        let params = net.init_parameters(cfg.stage_seed("init"));
        (Trainer::new(net, params, &train, tcfg)?, history_csv(&[]))
    };
    let start_epoch = trainer.state.epoch;
    let rows = trainer.run(&train, &test, |r| {
        eprintln!(
            "epoch {:>5}  lr {:.3e}  loss {:.4e}  test rmse {:.4e}  r2 {:.4}",
            r.epoch, r.lr, r.train_loss, r.test_rmse, r.test_r2
        )
    })?;
    let last: Option<HistoryRow> = rows.last().copied();
    // drop the header of the fresh rows when appending to an existing history
    let fresh = history_csv(&rows);
    history.push_str(fresh.split_once('\n').map_or("", |(_, body)| body));
    let ck = trainer.surrogate.to_checkpoint(Some(&trainer.state));
    let details = json!({
        "start_epoch": start_epoch,
        "end_epoch": trainer.state.epoch,
        "n_params": trainer.surrogate.params.len(),
        "n_train": train.len(),
        "n_test": test.len(),
        "final": last.map(|r| json!({"test_rmse": r.test_rmse, "test_r2": r.test_r2, "train_loss": r.train_loss})),
    });
    let mut out = OutputSet::new();
    out.write(run.checkpoint_path(), ck.to_bytes())?;
    out.write(&history_path, history)?;
    out.write(run.out_dir.join("train.manifest.json"), run.manifest("train", started, details))?;
    out.commit()?;
    let mut metrics = vec![("epoch", trainer.state.epoch.to_string())];
    let mut human = format!(
        "trained epochs {}..{} ({} parameters)",
        start_epoch,
        trainer.state.epoch,
        trainer.surrogate.params.len()
    );
    if let Some(r) = last {
        metrics.push(("test_rmse", r.test_rmse.to_string()));
        metrics.push(("test_r2", r.test_r2.to_string()));
        let _ = write!(human, ", test R2 {:.4}", r.test_r2);
    }
    Ok(Summary { human, metrics })
}

pub fn eval(run: &Run) -> Result<Summary, CliError> {
    let started = Instant::now();
    let surrogate = run.load_surrogate()?;
    let test = run.read_dataset(&run.test_path(), "test")?;
    let pred = surrogate.predict_batch(test.inputs())?;
    let (e, r2) = (rmse(&pred, test.outputs())?, r_squared(&pred, test.outputs())?);
    let dump = Dataset::new(
        test.inputs().to_vec(),
        pred,
        test.names_in.clone(),
        test.names_out.clone(),
        test.seed,
    )?;
    let details = json!({"n_test": test.len(), "test_rmse": e, "test_r2": r2});
    let mut out = OutputSet::new();
    out.write(run.out_dir.join("predictions.frds"), dump.to_bytes())?;
    out.write(run.out_dir.join("eval.manifest.json"), run.manifest("eval", started, details))?;
    out.commit()?;
    Ok(Summary {
        human: format!("evaluated {} test samples, R2 {:.4}", test.len(), r2),
        metrics: vec![
            ("n_test", test.len().to_string()),
            ("test_rmse", e.to_string()),
            ("test_r2", r2.to_string()),
        ],
    })
}

fn write_field_channels(out: &mut OutputSet, dir: &Path, prefix: &str, f: &Field, names: &[&str]) -> Result<(), CliError> {
    for (k, name) in names.iter().enumerate() {
        out.write(dir.join(format!("{prefix}_{name}.csv")), f.to_csv(k)?)?;
        out.write(dir.join(format!("{prefix}_{name}.pgm")), to_pgm(f, k)?)?;
    }
    Ok(())
}

fn write_uq(out: &mut OutputSet, dir: &Path, tag: &str, r: &UqResult, names: &[&str]) -> Result<(), CliError> {
    write_field_channels(out, dir, &format!("{tag}mean"), &r.mean, names)?;
    write_field_channels(out, dir, &format!("{tag}var"), &r.variance, names)?;
    for (i, c) in r.pdfs.iter().enumerate() {
        out.write(dir.join(format!("{tag}pdf_{i}.csv")), pdf_csv(c))?;
    }
    Ok(())
}

pub fn uq(run: &Run, kind: PredictorKind, reference: Reference) -> Result<Summary, CliError> {
    let started = Instant::now();
    let cfg = &run.cfg;
    let predictor = run.predictor(kind)?;
    let sampler = InputSampler::new(&cfg.case_spec())?;
    let probes = cfg.probes();
    let (n, seed) = (cfg.uq.n_samples, cfg.stage_seed("uq"));
    let result = run_uq(predictor.as_ref(), &sampler, n, &probes, seed).map_err(CliError::context("Monte Carlo run"))?;
    let names = run.channel_names();
    let dir = run.out_dir.join("uq");
    let mut out = OutputSet::new();
    write_uq(&mut out, &dir, "", &result, names)?;
    let mut metrics = vec![("n_samples", n.to_string())];
    let mut probe_info: Vec<serde_json::Value> = probes
        .iter()
        .zip(&result.pdfs)
        .map(|(p, c)| json!({"row": p.row, "col": p.col, "channel": names[p.channel], "bandwidth": c.bandwidth}))
        .collect();
    let mut summary = json!({
        "n_samples": n,
        "predictor": format!("{kind:?}").to_lowercase(),
        "reference": format!("{reference:?}").to_lowercase(),
    });
    let mut human = format!("propagated {n} samples through the {}", summary["predictor"].as_str().unwrap_or(""));
    if reference == Reference::Fem {
        let fem = FemPredictor::from_spec(&cfg.case_spec());
        let refr = run_uq(&fem, &sampler, n, &probes, seed).map_err(CliError::context("reference Monte Carlo run"))?;
        write_uq(&mut out, &dir, "ref_", &refr, names)?;
        let (mean_err, mean_max) = error_map(&result.mean, &refr.mean)?;
        let (var_err, var_max) = error_map(&result.variance, &refr.variance)?;
        write_field_channels(&mut out, &dir, "err_mean", &mean_err, names)?;
        write_field_channels(&mut out, &dir, "err_var", &var_err, names)?;
        let mut l1_max = 0.0f64;
        for (i, (a, b)) in result.probe_samples.iter().zip(&refr.probe_samples).enumerate() {
            let overlay = PdfOverlay::new(a, b)?;
            let l1 = overlay.l1();
            l1_max = l1_max.max(l1);
            probe_info[i]["l1"] = json!(l1);
            out.write(dir.join(format!("pdf_{i}_overlay.csv")), overlay.to_csv("predicted", "reference"))?;
        }
        summary["mean_max_rel_err"] = json!(mean_max);
        summary["var_max_rel_err"] = json!(var_max);
        summary["pdf_l1_max"] = json!(l1_max);
        metrics.push(("mean_err", mean_max.to_string()));
        metrics.push(("var_err", var_max.to_string()));
        metrics.push(("pdf_l1_max", l1_max.to_string()));
        let _ = write!(
            human,
            "; against the FEM: mean error {:.2}%, variance error {:.2}%, max PDF L1 {:.3}",
            100.0 * mean_max,
            100.0 * var_max,
            l1_max
        );
    }
    summary["probes"] = json!(probe_info);
    let summary_text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    out.write(dir.join("summary.json"), summary_text)?;
    out.write(run.out_dir.join("uq.manifest.json"), run.manifest("uq", started, json!({"n_samples": n})))?;
    out.commit()?;
    Ok(Summary { human, metrics })
}

/// Reads one channel written as `rows` lines of comma-separated numbers.
fn read_csv_channel(path: &Path) -> Result<(usize, usize, Vec<f64>), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let malformed = |m: String| CliError::Core(FormatError::Malformed(format!("{}: {m}", path.display())).into());
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let before = data.len();
        for tok in line.split(',') {
            let v: f64 = tok
                .trim()
                .parse()
                .map_err(|_| malformed(format!("line {}: cannot parse {:?}", i + 1, tok.trim())))?;
            data.push(v);
        }
        let n = data.len() - before;
        if *cols.get_or_insert(n) != n {
            return Err(malformed(format!("line {} has {n} values, expected {}", i + 1, cols.unwrap_or(0))));
        }
        rows += 1;
    }
    Ok((rows, cols.unwrap_or(0), data))
}

pub fn predict(run: &Run, kind: PredictorKind, inputs: &[PathBuf]) -> Result<Summary, CliError> {
    let cfg = &run.cfg;
    let case = cfg.case;
    if inputs.len() != case.in_channels() {
        return Err(CliError::Config(format!(
            "case {} takes {} input fields ({}), got {}",
            case.name(),
            case.in_channels(),
            case.input_names().join(", "),
            inputs.len()
        )));
    }
    let n = cfg.grid_n;
    let mut data = Vec::with_capacity(n * n * inputs.len());
    for p in inputs {
        let (r, c, v) = read_csv_channel(p)?;
        if (r, c) != (n, n) {
            return Err(CliError::Config(format!(
                "{} is {r}x{c}, the configured grid is {n}x{n}",
                p.display()
            )));
        }
        data.extend(v);
    }
    let x = Field::from_vec(n, n, inputs.len(), data)?;
    let y = run.predictor(kind)?.predict(&x)?;
    let mut out = OutputSet::new();
    let mut written = Vec::new();
    for (k, name) in run.channel_names().iter().enumerate() {
        let p = run.out_dir.join(format!("predict_{name}.csv"));
        out.write(&p, y.to_csv(k)?)?;
        written.push(p.display().to_string());
    }
    out.commit()?;
    Ok(Summary {
        human: format!("wrote {}", written.join(", ")),
        metrics: vec![("max_abs", y.max_abs().to_string())],
    })
}
