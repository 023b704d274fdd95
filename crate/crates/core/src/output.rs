//! CSV artifacts. Every file opens with a comment line carrying the tool
//! version, the configuration hash and the seed.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::harness::{Aggregate, Audit, BerRow, RunResult, SweepRow, TOOL_VERSION};

pub fn header_comment(config_hash: &str, seed: u64) -> String {
    format!("# pdpopa {TOOL_VERSION} config_hash={config_hash} seed={seed}\n")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn class_columns(cfg: &ScenarioConfig, prefix: &str) -> String {
    cfg.classes.iter().map(|c| format!(",{prefix}{}", c.name)).collect()
}

pub fn metrics_csv(cfg: &ScenarioConfig, r: &RunResult) -> String {
    let mut s = header_comment(&r.config_hash, r.seed);
    s.push_str("slot,time,users_present,users_served,sum_rate,total_power,network_cf_db,mean_ap_ee");
    for a in 0..cfg.ap_count() {
        let _ = write!(s, ",ee_ap{a}");
    }
    s.push_str(&class_columns(cfg, "ee_"));
    s.push_str(",mean_ber_bound,prediction_mae,prediction_violation,unserved_users,optimizer_iters,optimizer_solves,optimizer_max_iters,nonconverged,reserved_power\n");
    for m in &r.slots {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.slot, m.time, m.users_present, m.users_served, m.sum_rate, m.total_power, m.network_cf_db, m.mean_ap_ee
        );
        for e in &m.per_ap_ee {
            let _ = write!(s, ",{e}");
        }
        for e in &m.class_ee {
            let _ = write!(s, ",{}", opt(*e));
        }
        let _ = writeln!(
            s,
            ",{},{},{},{},{},{},{},{},{}",
            m.mean_ber_bound,
            m.prediction_mae,
            m.prediction_violation,
            m.unserved_users,
            m.optimizer_iters,
            m.optimizer_solves,
            m.optimizer_max_iters,
            m.nonconverged,
            m.reserved_power
        );
    }
    s
}

fn aggregate_header(cfg: &ScenarioConfig) -> String {
    format!(
        "slots,mean_ee,std_ee,cf_db,mean_sum_rate,std_sum_rate,mean_power,mean_ber_bound,prediction_mae,violation_rate,mean_unserved,mean_iters{}",
        class_columns(cfg, "ee_")
    )
}

fn aggregate_fields(a: &Aggregate) -> String {
    let mut s = format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        a.slots,
        a.mean_ee,
        a.std_ee,
        a.cf_db,
        a.mean_sum_rate,
        a.std_sum_rate,
        a.mean_power,
        a.mean_ber_bound,
        a.prediction_mae,
        a.violation_rate,
        a.mean_unserved,
        a.mean_iters
    );
    for e in &a.class_ee {
        let _ = write!(s, ",{}", opt(*e));
    }
    s
}

/// One row per run.
pub fn aggregate_csv(cfg: &ScenarioConfig, runs: &[RunResult]) -> String {
    let mut s = header_comment(&cfg.hash(), cfg.seed);
    let _ = writeln!(s, "scheme,seed,{},arrived,departed,violations", aggregate_header(cfg));
    for r in runs {
        let Audit {
            arrived,
            departed,
            violations,
            ..
        } = r.audit;
        let _ = writeln!(
            s,
            "{},{},{},{arrived},{departed},{violations}",
            r.scheme.name(),
            r.seed,
            aggregate_fields(&r.aggregate)
        );
    }
    s
}

pub fn sweep_csv(cfg: &ScenarioConfig, rows: &[SweepRow]) -> String {
    let mut s = header_comment(&cfg.hash(), cfg.seed);
    let _ = writeln!(s, "axis,value,scheme,seed,{}", aggregate_header(cfg));
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.scheme.name(),
            r.seed,
            aggregate_fields(&r.aggregate)
        );
    }
    s
}

pub fn ber_csv(cfg: &ScenarioConfig, rows: &[BerRow]) -> String {
    let mut s = header_comment(&cfg.hash(), cfg.seed);
    s.push_str("scheme,F,snr_db,ber,frames,seed,bits,errors,clipped_fraction\n");
    for r in rows {
        let p = &r.point;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.scheme.name(),
            r.order,
            p.snr_db,
            p.ber,
            p.frames,
            r.seed,
            p.bits,
            p.errors,
            p.clipped_fraction
        );
    }
    s
}

pub fn allocations_csv(r: &RunResult) -> String {
    let mut s = header_comment(&r.config_hash, r.seed);
    s.push_str("slot,ap,user,class,rho,power,rate,lambda,mu,ee_ap,converged,iters\n");
    for a in &r.allocations {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            a.slot, a.ap, a.user, a.class, a.rho, a.power, a.rate, a.lambda, a.mu, a.ee_ap, a.converged, a.iters
        );
    }
    s
}

pub fn forecasts_csv(r: &RunResult) -> String {
    let mut s = header_comment(&r.config_hash, r.seed);
    s.push_str("slot,ap,class,basis,p_tau,q_tau,mu_hat,n_tilde,actual,loss\n");
    for f in &r.forecasts {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            f.slot, f.ap, f.class, f.basis, f.p_tau, f.q_tau, f.mu_hat, f.n_tilde, f.actual, f.loss
        );
    }
    s
}

pub fn snapshots_csv(r: &RunResult) -> String {
    let mut s = header_comment(&r.config_hash, r.seed);
    s.push_str("slot,time,user,class,x,y,serving_ap,power\n");
    for p in &r.snapshots {
        let ap = p.serving_ap.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{},{},{}", p.slot, p.time, p.user, p.class, p.x, p.y, ap, p.power);
    }
    s
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::create_dir_all(dir)
        .and_then(|_| std::fs::write(&path, contents))
        .map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}
