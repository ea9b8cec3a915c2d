//! Acceptance gate. Every test prints one `criterion N [PASS|FAIL]` line on
//! stderr (uncaptured) and then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinsem_core::agent::dqn::{batch_loss, batch_loss_grad};
use twinsem_core::agent::env::{run_episode, EpisodeLog, Gate, MessageSource};
use twinsem_core::agent::{Mlp, PidGains, PidMultiplier, Transition};
use twinsem_core::channel::{Link, PerfectLink};
use twinsem_core::experiment::{
    write_episodes_csv, Checkpoint, ConstraintCase, EpisodeRow, Experiment, ExperimentConfig, RunSummary, Scheme,
};
use twinsem_core::features::AnomalyPolicy;
use twinsem_core::message::{FieldSet, GRIPPER_BYTES};
use twinsem_core::{ChannelParams, KinematicChain, Phase, TaskKind, Trajectory, UplinkChannel};

fn line(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} [{verdict}] {name}: {detail}");
}

fn experiment(task: TaskKind) -> Experiment {
    Experiment::new(ExperimentConfig { task, ..Default::default() }).unwrap()
}

fn fs_log(ex: &Experiment, link: &mut dyn Link) -> EpisodeLog {
    run_episode(&ex.env(AnomalyPolicy::Halt), MessageSource::Semantic, Gate::Always, link).unwrap()
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn criterion_01_byte_accounting() {
    use Phase::*;
    let table = BTreeMap::from([
        (Reach, 28),
        (Transport, 40),
        (PushPull, 40),
        (Grasp, 16),
        (PreRelease, 4),
        (Release, 4),
        (PreToss, 28),
        (Toss, 32),
        (Pause, 0),
    ]);
    let mut bad = Vec::new();
    if FieldSet::FULL.byte_size() != 44 || FieldSet::EMPTY.byte_size() != 0 {
        bad.push("field sets".to_string());
    }
    let mut checked = 0;
    for task in TaskKind::ALL {
        let ex = experiment(task);
        let log = fs_log(&ex, &mut PerfectLink);
        for r in log.records.iter().filter(|r| r.bytes > 0) {
            checked += 1;
            if r.bytes != table[&r.phase] {
                bad.push(format!("{task} slot {} {} {} B", r.t, r.phase, r.bytes));
            }
        }
    }
    let pass = bad.is_empty();
    line(1, "byte accounting", pass, &format!("{checked} transmissions checked, {} off-table", bad.len()));
    assert!(pass, "{bad:?}");
}

#[test]
fn criterion_02_wired_baseline_is_exact() {
    let mut worst = (0.0f64, 0.0f64);
    for task in TaskKind::ALL {
        let ex = experiment(task);
        let logs = ex.run_scheme(Scheme::Wired, None).unwrap();
        let s = ex.summarize(Scheme::Wired, None, &logs);
        worst = (worst.0.max(s.mean_e_q), worst.1.max(s.mean_e_qdot));
    }
    let pass = worst == (0.0, 0.0);
    line(2, "wired baseline", pass, &format!("max mean e_q {:e}, e_qdot {:e}", worst.0, worst.1));
    assert!(pass);
}

#[test]
fn criterion_03_jacobian_matches_finite_differences() {
    let chain = KinematicChain::fr3();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let configs = 200;
    for _ in 0..configs {
        let q: Vec<f64> = chain.joints().iter().map(|j| rng.random_range(j.q_min..j.q_max)).collect();
        let jac = chain.jacobian_linear(&q).unwrap();
        for k in 0..q.len() {
            let mut plus = q.clone();
            plus[k] += h;
            let mut minus = q.clone();
            minus[k] -= h;
            let d = (chain.forward_kinematics(&plus).unwrap().translation.vector
                - chain.forward_kinematics(&minus).unwrap().translation.vector)
                / (2.0 * h);
            for i in 0..3 {
                worst = worst.max((d[i] - jac[(i, k)]).abs());
            }
        }
    }
    let pass = worst <= 1e-6;
    line(3, "jacobian", pass, &format!("{configs} configurations, max entry error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_04_channel_fidelity() {
    let calibrated = ChannelParams::calibrated_default();
    let sets = [
        ChannelParams::PAPER,
        calibrated,
        ChannelParams { m_shape: 2.0, ..calibrated },
        ChannelParams { m_shape: 0.7, omega: 60.0, ..calibrated },
        ChannelParams { d: 60.0, beta_db: 15.0, ..ChannelParams::PAPER },
    ];
    let mut worst = 0.0f64;
    for (i, p) in sets.into_iter().enumerate() {
        let mut ch = UplinkChannel::new(p, 500 + i as u64).unwrap();
        let n = 1_000_000;
        let hits = (0..n).filter(|_| ch.transmit(44).unwrap().delivered).count();
        worst = worst.max((hits as f64 / n as f64 - p.delivery_probability()).abs());
    }
    let pass = worst <= 0.005;
    line(4, "channel fidelity", pass, &format!("5 sets x 1e6 slots, max |empirical - analytic| {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_05_phase_classification() {
    let mut details = Vec::new();
    let mut pass = true;
    for task in TaskKind::ALL {
        let ex = experiment(task);
        let bounds = ex.traj.boundaries();
        let log = fs_log(&ex, &mut PerfectLink);
        let wrong: Vec<usize> = log.records.iter().filter(|r| r.phase != r.true_phase).map(|r| r.t).collect();
        let far = wrong.iter().filter(|&&t| !bounds.iter().any(|&b| (t as i64 - b as i64).abs() <= 20)).count();
        let acc = 1.0 - wrong.len() as f64 / ex.traj.len() as f64;
        pass &= acc >= 0.98 && far == 0;
        details.push(format!("{task} {:.2}% ({} off, {far} far)", 100.0 * acc, wrong.len()));
    }
    line(5, "phase classification", pass, &details.join(", "));
    assert!(pass);
}

#[test]
fn criterion_06_fs_load_reduction() {
    let mut details = Vec::new();
    let mut pass = true;
    for (task, limit) in [(TaskKind::PickPlace, 0.70), (TaskKind::PickToss, 0.65), (TaskKind::PushPull, 0.70)] {
        let ex = experiment(task);
        let load = |scheme| {
            let logs = ex.run_scheme(scheme, None).unwrap();
            ex.summarize(scheme, None, &logs).cumulative_load.unwrap()
        };
        let ratio = load(Scheme::Fs) / load(Scheme::Wireless);
        pass &= ratio <= limit;
        details.push(format!("{task} {:.1}% (limit {:.0}%)", 100.0 * ratio, 100.0 * limit));
    }
    line(6, "FS load reduction", pass, &details.join(", "));
    assert!(pass);
}

/// Slots where gripper bytes were sent although the twin had already ACKed
/// the current physical state. Toss messages always carry the gripper.
fn gripper_violations(traj: &Trajectory, log: &EpisodeLog) -> usize {
    let mut acked = Some(false);
    let mut truth = false;
    let mut bad = 0;
    for (slot, r) in traj.slots.iter().zip(&log.records) {
        if slot.gripper != truth {
            acked = None;
            truth = slot.gripper;
        }
        if acked == Some(slot.gripper) && r.phase != Phase::Toss && r.gripper_bytes > 0 {
            bad += 1;
        }
        if r.gripper_bytes == GRIPPER_BYTES && r.delivered {
            acked = Some(slot.gripper);
        }
    }
    bad
}

#[test]
fn criterion_07_gripper_updates_stop_after_ack() {
    let mut bad = 0;
    let mut episodes = 0;
    for task in TaskKind::ALL {
        let ex = experiment(task);
        bad += gripper_violations(&ex.traj, &fs_log(&ex, &mut PerfectLink));
        for stream in 0..20 {
            let mut ch = twinsem_core::experiment::episode_channel(ex.channel, 7, stream).unwrap();
            bad += gripper_violations(&ex.traj, &fs_log(&ex, &mut ch));
            episodes += 1;
        }
    }
    let pass = bad == 0;
    line(7, "gripper policy", pass, &format!("{episodes} lossy episodes + 3 lossless, {bad} resends after ACK"));
    assert!(pass);
}

#[test]
fn criterion_08_dqn_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let online = Mlp::new(&[15, 64, 64, 2], &mut rng).unwrap();
    let target = Mlp::new(&[15, 64, 64, 2], &mut rng).unwrap();
    let batch: Vec<Transition> = (0..32)
        .map(|i| Transition {
            s: (0..15).map(|_| rng.random()).collect(),
            a: rng.random_range(0..2),
            r: -rng.random::<f64>(),
            c: 0.1 * rng.random::<f64>(),
            s_next: (0..15).map(|_| rng.random()).collect(),
            done: i % 5 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let mut grad = vec![0.0; online.n_params()];
    batch_loss_grad(&online, &target, &refs, 0.9, &mut grad);
    let candidates: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = candidates[rng.random_range(0..candidates.len())];
        let mut plus = online.clone();
        plus.params_mut()[i] += h;
        let mut minus = online.clone();
        minus.params_mut()[i] -= h;
        let numeric = (batch_loss(&plus, &target, &refs, 0.9) - batch_loss(&minus, &target, &refs, 0.9)) / (2.0 * h);
        worst = worst.max((numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()));
    }
    let pass = worst <= 1e-4;
    line(8, "gradient check", pass, &format!("20 parameters, max relative error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_09_pid_closed_forms() {
    let c = 0.003;
    let ki = 1.5;
    let mut m = PidMultiplier::new(PidGains { kp: 0.0, ki, kd: 0.0 }, 1.0).unwrap();
    let mut worst = 0.0f64;
    for k in 1..=50 {
        m.update(0.01 + c, 0.01);
        worst = worst.max((m.lambda - ki * k as f64 * c).abs());
    }
    // Δ = 0.001, I = 0.001, D = 0.002 from the previous mean 0.010.
    let mut w = PidMultiplier::new(PidGains { kp: 1.0, ki: 1.0, kd: 1.0 }, 1.0).unwrap();
    w.prev_mean = Some(0.010);
    worst = worst.max((w.update(0.012, 0.011) - 0.004).abs());
    let pass = worst <= 1e-12;
    line(9, "PID closed forms", pass, &format!("max deviation {worst:.1e}"));
    assert!(pass);
}

struct Trained {
    load: f64,
    e_q: f64,
    e_qdot: f64,
    c: (f64, f64),
}

fn train_case(ex: &Experiment, case: ConstraintCase, baseline: &RunSummary, out: &Path) -> Trained {
    let t = ex.train(case, Some(baseline), |_| {}).unwrap();
    let name = format!("training_{}.csv", case.label().to_ascii_lowercase());
    write_episodes_csv(std::fs::File::create(out.join(name)).unwrap(), &t.rows).unwrap();
    let last: &[EpisodeRow] = &t.rows[t.rows.len() - 20..];
    let mean = |f: &dyn Fn(&EpisodeRow) -> f64| last.iter().map(f).sum::<f64>() / 20.0;
    Trained {
        load: mean(&|r| r.cumulative_load as f64),
        e_q: mean(&|r| r.mean_e_q),
        e_qdot: mean(&|r| r.mean_e_qdot),
        c: (t.constraints.c_q, t.constraints.c_qdot),
    }
}

#[test]
fn criterion_10_constrained_training() {
    let ex = experiment(TaskKind::PickPlace);
    let out = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out).unwrap();
    let baseline = ex.wireless_baseline().unwrap();
    let fs = ex.summarize(Scheme::Fs, None, &ex.run_scheme(Scheme::Fs, None).unwrap()).cumulative_load.unwrap();
    let sc = train_case(&ex, ConstraintCase::Sc, &baseline, &out);
    let rc = train_case(&ex, ConstraintCase::Rc, &baseline, &out);
    let within = |t: &Trained| t.e_q <= 1.1 * t.c.0 && t.e_qdot <= 1.1 * t.c.1;
    let sc_pass = within(&sc) && sc.load <= 0.75 * fs;
    let rc_pass = within(&rc) && rc.load <= 0.50 * fs;
    let describe = |t: &Trained| {
        format!(
            "load {:.1}% of FS, e_q {:.3e}/{:.3e}, e_qdot {:.3e}/{:.3e}",
            100.0 * t.load / fs,
            t.e_q,
            t.c.0,
            t.e_qdot,
            t.c.1
        )
    };
    line(10, "training SC (limit 75%)", sc_pass, &describe(&sc));
    line(10, "training RC (soft limit 50%)", rc_pass, &describe(&rc));
    let _ = writeln!(std::io::stderr(), "             training curves in {}", out.display());
    assert!(sc_pass);
    assert!(within(&rc), "RC constraints violated");
}

#[test]
fn criterion_11_scheme_monotonicity() {
    let slack = 1e-7;
    let mut pass = true;
    let mut details = Vec::new();
    for task in TaskKind::ALL {
        let ex = experiment(task);
        let eval = |scheme: Scheme, ck: Option<&str>| {
            let mut agent = ck.map(|c| {
                let path = repo_root().join(format!("configs/checkpoints/{task}_{c}.json"));
                Checkpoint::load(&path).unwrap().agent().unwrap()
            });
            let logs = ex.run_scheme(scheme, agent.as_mut()).unwrap();
            ex.summarize(scheme, None, &logs)
        };
        let rows = [
            eval(Scheme::Wireless, None),
            eval(Scheme::Fs, None),
            eval(Scheme::FsPpdqn, Some("sc")),
            eval(Scheme::FsPpdqn, Some("rc")),
        ];
        let ok = rows.windows(2).all(|w| {
            w[1].cumulative_load <= w[0].cumulative_load
                && w[1].mean_e_q + slack >= w[0].mean_e_q
                && w[1].mean_e_qdot + slack >= w[0].mean_e_qdot
        });
        pass &= ok;
        let loads: Vec<String> = rows.iter().map(|r| format!("{:.0}", r.cumulative_load.unwrap())).collect();
        details.push(format!("{task} {}{}", loads.join(">="), if ok { "" } else { " (violated)" }));
    }
    line(11, "scheme monotonicity", pass, &details.join(", "));
    assert!(pass);
}

fn twinsem(args: &[&str], out: &Path) {
    let status = Command::new(env!("CARGO_BIN_EXE_twinsem"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{args:?}: {}", String::from_utf8_lossy(&status.stderr));
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn criterion_12_determinism() {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let d = dir.path();
        twinsem(&["trajectory", "--task", "pick_toss"], &d.join("trajectory"));
        twinsem(&["calibrate-channel", "--target", "0.9"], &d.join("channel"));
        twinsem(&["baseline", "--task", "push_pull", "--eval-episodes", "3"], &d.join("baseline"));
        twinsem(&["train", "--episodes", "15", "--eval-episodes", "2", "--constraint", "rc"], &d.join("train"));
        let ck = d.join("train/checkpoint.json");
        twinsem(&["eval", "--checkpoint", ck.to_str().unwrap(), "--eval-episodes", "2"], &d.join("eval"));
        let summary = d.join("eval/summary.csv");
        twinsem(&["report", "--input", summary.to_str().unwrap()], &d.join("report"));
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["trajectory", "channel", "baseline", "train", "eval", "report"] {
        let (x, y) = (files(&runs[0].path().join(sub)), files(&runs[1].path().join(sub)));
        assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>());
        for (name, bytes) in &x {
            compared += 1;
            if &y[name] != bytes {
                differing.push(format!("{sub}/{name}"));
            }
        }
    }
    let pass = differing.is_empty() && compared >= 12;
    line(12, "determinism", pass, &format!("{compared} output files compared, {} differ", differing.len()));
    assert!(pass, "{differing:?}");
}
