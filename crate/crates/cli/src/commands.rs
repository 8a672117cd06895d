use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lobrm_autodiff::{grad_check, AutodiffError, GradCheckConfig, Graph, ParamStore, Tensor};
use lobrm_core::experiments::{run_ablation, run_training_size_study, AblationTable, SplitSamples};
use lobrm_core::lobster::{align_and_filter, parse_message_file, parse_orderbook_file, read_taq_csv, write_taq_csv};
use lobrm_core::metrics::evaluate;
use lobrm_core::model::{LobrmModel, Mode, RidgeModel, Slfn};
use lobrm_core::pipeline::{fit_transforms, Manifest, Part, PrepConfig, Prepared};
use lobrm_core::preprocess::{build_samples, replay_windows, SampleWindow};
use lobrm_core::synth::{simulate as simulate_market, Simulation};
use lobrm_core::train::{curve_csv, train as fit, Checkpoint, ModelState};
use lobrm_core::trend::run_trend_experiment;
use lobrm_core::types::{Side, TradeRecord};
use lobrm_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{ModelKind, RunConfig};
use crate::Common;

const OUT_ENV: &str = "LOBRM_OUT";
const LOG_FILE: &str = "run.log";

struct Run {
    cfg: RunConfig,
    mode: Mode,
    side: Side,
    out: PathBuf,
    log: File,
    start: Instant,
}

impl Run {
    fn new(c: &Common) -> Result<Self> {
        let mut cfg = RunConfig::load(c.config.as_deref())?;
        if let Some(p) = &c.manifest {
            cfg.manifest = Some(p.clone());
        }
        if let Some(p) = &c.checkpoint {
            cfg.checkpoint = Some(p.clone());
        }
        if let Some(v) = c.variant {
            cfg.experiment.model.variant = v;
            cfg.gradcheck.model.variant = v;
        }
        if let Some(s) = c.seed {
            cfg.experiment.train.seed = s;
            cfg.trend.train.seed = s;
            cfg.market.seed = s;
        }
        let out = c
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)?;
        let log = File::create(out.join(LOG_FILE))?;
        Ok(Self {
            mode: c.mode.unwrap_or(Mode::Full),
            side: c.side.or(cfg.side).unwrap_or(Side::Bid),
            cfg,
            out,
            log,
            start: Instant::now(),
        })
    }

    fn log(&mut self, msg: &str) {
        let line = format!("[{:>9.3}s] {msg}", self.start.elapsed().as_secs_f64());
        eprintln!("{line}");
        let _ = writeln!(self.log, "{line}");
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.out.join(name), contents)?;
        self.log(&format!("wrote {name}"));
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write(name, &(text + "\n"))
    }

    fn manifest(&mut self) -> Result<Manifest> {
        let path = self
            .cfg
            .manifest
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no manifest given".into()))?;
        Manifest::load(&path)
    }

    fn days(&mut self) -> Result<(Manifest, Vec<Vec<TradeRecord>>)> {
        let m = self.manifest()?;
        let days = m.load_days()?;
        let trades: usize = days.iter().map(Vec::len).sum();
        self.log(&format!("loaded {} days, {trades} trades of {}", days.len(), m.symbol));
        Ok((m, days))
    }

    fn checkpoint(&mut self) -> Result<Checkpoint> {
        let path = self
            .cfg
            .checkpoint
            .clone()
            .ok_or_else(|| Error::InvalidConfig("no checkpoint given".into()))?;
        Checkpoint::load(&path)
    }
}

fn require_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

pub fn ingest(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let (m, days) = run.days()?;
    let mut summary = Vec::new();
    for (i, day) in days.iter().enumerate() {
        let name = format!("{}_day{}_taq.csv", m.symbol, i + 1);
        let mut buf = Vec::new();
        write_taq_csv(day, &mut buf)?;
        std::fs::write(run.out.join(&name), buf)?;
        summary.push(json!({ "day": i + 1, "file": name, "trades": day.len() }));
    }
    run.write_json("ingest.json", &json!({ "symbol": m.symbol, "days": summary }))
}

pub fn fit_stats(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let (m, days) = run.days()?;
    let (cuts, stats) = fit_transforms(&days, &run.cfg.experiment.prep)?;
    run.write_json(
        "transforms.json",
        &json!({ "symbol": m.symbol, "winsor_cuts": cuts, "norm_stats": stats }),
    )
}

pub fn train(c: &Common, kind: Option<ModelKind>) -> Result<()> {
    let mut run = Run::new(c)?;
    let (m, days) = run.days()?;
    let prepared = Prepared::fit(&days, &run.cfg.experiment.prep)?;
    let side = run.side;
    let kind = kind.or(run.cfg.model_kind).unwrap_or(ModelKind::Lobrm);
    let tc = run.cfg.experiment.train.clone();
    let (model, outcome) = match kind {
        ModelKind::Lobrm => {
            let mc = run.cfg.experiment.model.clone();
            mc.validate()?;
            let samples = SplitSamples::new(&prepared, side, mc.window)?;
            let mut model = LobrmModel::new(mc, side, run.mode, tc.seed, prepared.mean_train_phi())?;
            let outcome = fit(&mut model, &samples.train, &samples.val, &tc)?;
            (ModelState::Lobrm(model), Some(outcome))
        }
        ModelKind::Slfn => {
            let sc = run.cfg.slfn.clone();
            let train = prepared.samples(Part::Train, side, sc.window)?;
            let val = prepared.samples(Part::Val, side, sc.window)?;
            let mut model = Slfn::new(sc, tc.seed)?;
            let outcome = fit(&mut model, &train, &val, &tc)?;
            (ModelState::Slfn(model), Some(outcome))
        }
        ModelKind::Ridge => {
            let mc = run.cfg.experiment.model.clone();
            let train = prepared.samples(Part::Train, side, mc.window)?;
            let val = prepared.samples(Part::Val, side, mc.window)?;
            let (model, scores) = RidgeModel::fit_select(
                &train,
                &val,
                mc.window,
                mc.k,
                mc.tick,
                mc.split_trades,
                &run.cfg.ridge.lambdas,
            )?;
            let mut csv = String::from("lambda,val_l1\n");
            for (l, v) in scores {
                csv += &format!("{l},{v}\n");
            }
            run.write("ridge_scores.csv", &csv)?;
            (ModelState::Ridge(model), None)
        }
    };
    if let Some(o) = &outcome {
        run.log(&format!("best iteration {} val L1 {}", o.best_iteration, o.best_val_loss));
        run.write("curve.csv", &curve_csv(&o.curve))?;
    }
    let ckpt = Checkpoint {
        symbol: m.symbol,
        side,
        norm_stats: prepared.stats,
        winsor_cuts: prepared.cuts,
        model,
        train_config: outcome.is_some().then_some(tc),
        outcome,
    };
    let name = ckpt.file_name();
    ckpt.save(&run.out.join(&name))?;
    run.log(&format!("wrote {name}"));
    Ok(())
}

pub fn eval(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let ckpt = run.checkpoint()?;
    let (_, days) = run.days()?;
    let prepared = Prepared::with_transforms(
        &days,
        run.cfg.experiment.prep.scheme,
        ckpt.winsor_cuts,
        ckpt.norm_stats,
    )?;
    let window = ckpt.model.window();
    let mut windows: Vec<SampleWindow> = Vec::new();
    let mut day_of = Vec::new();
    for (i, d) in prepared.test.iter().enumerate() {
        let w = build_samples(d, ckpt.side, window)?;
        day_of.extend(std::iter::repeat_n(i, w.len()));
        windows.extend(w);
    }
    if windows.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let preds = ckpt.model.predict(&windows)?;
    let e = &run.cfg.eval;
    let report = evaluate(&preds, &windows, &day_of, &ckpt.norm_stats, ckpt.side, e.permutations, e.seed)?;
    run.log(&format!("{} test L1 {}", ckpt.model.label(), report.test_l1));
    run.write("eval.csv", &report.to_csv())?;
    run.write_json("eval.json", &report)
}

pub fn ablate(c: &Common, freeze_zero_ws: bool) -> Result<()> {
    let mut run = Run::new(c)?;
    let (m, days) = run.days()?;
    let prepared = Prepared::fit(&days, &run.cfg.experiment.prep)?;
    let sides = match c.side.or(run.cfg.side) {
        Some(s) => vec![s],
        None => Side::BOTH.to_vec(),
    };
    let mut runs = Vec::new();
    for side in sides {
        let losses = run_ablation(&prepared, side, &run.cfg.experiment, freeze_zero_ws)?;
        run.log(&format!("{side}: {losses:?}"));
        runs.push((format!("{}_{side}", m.symbol), losses));
    }
    let table = AblationTable::from_runs(&runs)?;
    run.write("ablation.csv", &table.to_csv())?;
    run.write_json("ablation.json", &table)
}

pub fn size_study(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let (_, days) = run.days()?;
    let study = run_training_size_study(&days, run.side, run.mode, &run.cfg.experiment)?;
    run.write("size_study.csv", &study.to_csv())?;
    run.write_json("size_study.json", &study)
}

pub fn trend(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let (_, days) = run.days()?;
    let report = run_trend_experiment(&days, &run.cfg.trend)?;
    run.log(&format!("epsilon {} ticks, majority {}", report.epsilon, report.majority_accuracy));
    run.write("trend.csv", &report.to_csv())?;
    run.write_json("trend.json", &report)
}

pub fn simulate(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let sim = simulate_market(&run.cfg.market)?;
    let manifest = sim.write(&run.out)?;
    run.log(&format!("wrote {} days of {}", manifest.days.len(), manifest.symbol));
    Ok(())
}

/// Parses the simulated files from memory, as ingestion would from disk.
fn load_simulation(sim: &Simulation) -> Result<Vec<Vec<TradeRecord>>> {
    let c = &sim.config;
    sim.days
        .iter()
        .map(|d| {
            let msgs = parse_message_file(Cursor::new(d.message_csv()?))?;
            let rows = parse_orderbook_file(Cursor::new(d.orderbook_csv()?), c.levels)?;
            align_and_filter(&msgs, &rows, &c.session, c.tick)
        })
        .collect()
}

/// Redraws every parameter with magnitude in [0.05, 0.6), away from the
/// kinks of the piecewise-linear activations.
fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        for x in p.value.data_mut() {
            let m: f64 = rng.gen_range(0.05..0.6);
            *x = if rng.gen_bool(0.5) { m } else { -m };
        }
    }
}

pub fn gradcheck(c: &Common) -> Result<()> {
    let mut run = Run::new(c)?;
    let gc = run.cfg.gradcheck.clone();
    gc.model.validate()?;
    if gc.instances == 0 || gc.batch == 0 {
        return Err(Error::InvalidConfig("instances and batch must be positive".into()));
    }
    let check = GradCheckConfig {
        step: gc.step,
        tolerance: gc.tolerance,
        abs_floor: gc.abs_floor,
        kink_ratio: gc.kink_ratio,
    };
    let days = load_simulation(&simulate_market(&gc.market)?)?;
    let prepared = Prepared::fit(&days, &PrepConfig::default())?;
    let windows = prepared.samples(Part::Train, run.side, gc.model.window)?;
    let seed = run.cfg.experiment.train.seed;

    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for i in 0..gc.instances as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
        let mut model =
            LobrmModel::new(gc.model.clone(), run.side, run.mode, seed.wrapping_add(i), prepared.mean_train_phi())?;
        scramble(&mut model.params, &mut rng);
        let batch: Vec<&SampleWindow> = (0..gc.batch).map(|_| &windows[rng.gen_range(0..windows.len())]).collect();
        let inputs = model.inputs(&batch)?;
        let outputs = batch.len() * gc.model.outputs();
        let weights = Tensor::matrix(
            batch.len(),
            gc.model.outputs(),
            (0..outputs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let report = grad_check(
            |g: &mut Graph, s: &ParamStore| {
                let y = match model.parts(g, s, &inputs) {
                    Ok(p) => p.output,
                    Err(Error::Autodiff(a)) => return Err(a),
                    Err(e) => {
                        let msg = e.to_string();
                        *failure.borrow_mut() = Some(e);
                        return Err(AutodiffError::UnknownParam(msg));
                    }
                };
                let w = g.constant(weights.clone());
                let projected = g.mul(y, w)?;
                Ok(g.sum(projected))
            },
            &model.params,
            check,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        let report = report?;
        worst = worst.max(report.max_rel_error);
        run.log(&format!(
            "instance {i}: {} entries, {} at kinks, max rel error {:e}",
            report.checked, report.kinks, report.max_rel_error
        ));
        rows.push(json!({
            "seed": seed.wrapping_add(i),
            "checked": report.checked,
            "kinks": report.kinks,
            "max_rel_error": report.max_rel_error,
            "max_abs_error": report.max_abs_error,
            "worst": report.worst,
            "passed": report.passed,
        }));
    }
    let passed = rows.iter().all(|r| r["passed"] == json!(true));
    run.write_json(
        "gradcheck.json",
        &json!({
            "variant": gc.model.variant,
            "mode": run.mode,
            "side": run.side,
            "step": gc.step,
            "tolerance": gc.tolerance,
            "passed": passed,
            "instances": rows,
        }),
    )?;
    if passed {
        Ok(())
    } else {
        Err(Error::GradientMismatch {
            max_rel_error: worst,
            tolerance: gc.tolerance,
        })
    }
}

pub fn replay(c: &Common, input: Option<PathBuf>) -> Result<()> {
    let mut run = Run::new(c)?;
    let ckpt = run.checkpoint()?;
    let input = input
        .or_else(|| run.cfg.input.clone())
        .ok_or_else(|| Error::InvalidConfig("no input given".into()))?;
    let session = match (run.cfg.session, run.cfg.manifest.is_some()) {
        (Some(s), _) => s,
        (None, true) => run.manifest()?.session,
        (None, false) => Default::default(),
    };
    let events: Vec<_> = read_taq_csv(require_file(&input)?)?
        .into_iter()
        .filter(|e| session.contains(e.timestamp))
        .collect();
    run.log(&format!("{} trades in session", events.len()));
    let windows = replay_windows(&events, ckpt.side, ckpt.model.window(), &ckpt.winsor_cuts, &ckpt.norm_stats)?;
    let preds = if windows.is_empty() {
        Vec::new()
    } else {
        ckpt.model.predict(&windows)?
    };
    let file = File::create(run.out.join("replay.csv"))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "timestamp,level,side,volume")?;
    for (ev, p) in events.iter().zip(&preds) {
        for (l, &z) in p.iter().enumerate() {
            let shares = ckpt.norm_stats.deep_to_shares(ckpt.side, z)?;
            writeln!(w, "{},{},{},{}", ev.timestamp, l + 2, ckpt.side, shares)?;
        }
    }
    w.flush()?;
    run.log("wrote replay.csv");
    Ok(())
}
