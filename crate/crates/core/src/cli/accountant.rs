use std::fmt::Write as _;

use super::scenario::DeltaPreset;
use crate::dp::{privacy_spend, DpSpec, PrivacySpend};
use crate::error::{Error, Result};

/// One accountant table row.
#[derive(Clone, Debug, PartialEq)]
pub struct AccountantRow {
    pub spec: DpSpec,
    pub spend: PrivacySpend,
}

/// Repeatable per-row parameters. Each list has length 1 (broadcast) or the
/// common row count.
#[derive(Clone, Debug, Default)]
pub struct AccountantArgs {
    pub cohort_size: Vec<usize>,
    pub population: Vec<usize>,
    pub noise_multiplier: Vec<f64>,
    pub clip: Vec<f64>,
    pub rounds: Vec<u64>,
    pub delta: Vec<f64>,
    pub delta_preset: Option<DeltaPreset>,
}

fn pick<T: Copy>(name: &str, v: &[T], i: usize, n: usize) -> Result<T> {
    match v.len() {
        1 => Ok(v[0]),
        len if len == n => Ok(v[i]),
        0 => Err(Error::Config(format!("--{name} is required"))),
        len => Err(Error::Config(format!("--{name} given {len} times; expected 1 or {n}"))),
    }
}

pub fn accountant_rows(args: &AccountantArgs) -> Result<Vec<AccountantRow>> {
    let preset = args.delta_preset.unwrap_or(if args.delta.is_empty() {
        DeltaPreset::InvN
    } else {
        DeltaPreset::Explicit
    });
    let lens = [
        args.cohort_size.len(),
        args.population.len(),
        args.noise_multiplier.len(),
        args.clip.len(),
        args.rounds.len(),
        args.delta.len(),
    ];
    let n = lens.into_iter().max().unwrap_or(0).max(1);
    (0..n)
        .map(|i| {
            let population = pick("N", &args.population, i, n)?;
            let explicit = if args.delta.is_empty() {
                None
            } else {
                Some(pick("delta", &args.delta, i, n)?)
            };
            let spec = DpSpec {
                clip: if args.clip.is_empty() { 1.0 } else { pick("S", &args.clip, i, n)? },
                noise_multiplier: pick("z", &args.noise_multiplier, i, n)?,
                cohort_size: pick("qN", &args.cohort_size, i, n)?,
                population,
                rounds: pick("rounds", &args.rounds, i, n)?,
                delta: preset.resolve(population, explicit)?,
            };
            spec.validate()?;
            let spend = privacy_spend(spec.sampling_rate(), spec.noise_multiplier, spec.rounds, spec.delta)?;
            Ok(AccountantRow { spec, spend })
        })
        .collect()
}

pub fn rows_to_csv(rows: &[AccountantRow]) -> String {
    let mut out = String::from("qN,N,q,z,S,T,delta,epsilon,alpha\n");
    for r in rows {
        let s = &r.spec;
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{},{}",
            s.cohort_size,
            s.population,
            s.sampling_rate(),
            s.noise_multiplier,
            s.clip,
            s.rounds,
            s.delta,
            r.spend.epsilon,
            r.spend.order
        )
        .unwrap();
    }
    out
}

pub fn rows_to_table(rows: &[AccountantRow]) -> String {
    let mut out = format!(
        "{:>7} {:>10} {:>10} {:>6} {:>6} {:>6} {:>10} {:>9} {:>6}\n",
        "qN", "N", "q", "z", "S", "T", "delta", "epsilon", "alpha"
    );
    for r in rows {
        let s = &r.spec;
        writeln!(
            out,
            "{:>7} {:>10} {:>10.3e} {:>6} {:>6} {:>6} {:>10.3e} {:>9.4} {:>6}",
            s.cohort_size,
            s.population,
            s.sampling_rate(),
            s.noise_multiplier,
            s.clip,
            s.rounds,
            s.delta,
            r.spend.epsilon,
            r.spend.order
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> AccountantArgs {
        AccountantArgs {
            cohort_size: vec![1000],
            population: vec![250_000, 1_250_000, 500_000],
            noise_multiplier: vec![1.0],
            clip: vec![0.1],
            rounds: vec![1000],
            delta: vec![4e-8, 8e-9, 2e-8],
            delta_preset: None,
        }
    }

    #[test]
    fn broadcasts_single_values() {
        let rows = accountant_rows(&args()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.spec.cohort_size == 1000));
        assert_eq!(rows[2].spec.population, 500_000);
        let csv = rows_to_csv(&rows);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("qN,N,q,z,S,T,delta,epsilon,alpha\n"));
    }

    #[test]
    fn mismatched_lengths_and_bad_params_are_rejected() {
        let mut a = args();
        a.rounds = vec![1, 2];
        assert!(matches!(accountant_rows(&a), Err(Error::Config(_))));
        let mut a = args();
        a.cohort_size = vec![10_000_000];
        assert!(matches!(accountant_rows(&a), Err(Error::InvalidParameter(_))));
        let mut a = args();
        a.delta_preset = Some(DeltaPreset::InvN);
        assert!(matches!(accountant_rows(&a), Err(Error::Config(_))));
    }

    #[test]
    fn presets_derive_delta_from_population() {
        let mut a = args();
        a.delta.clear();
        a.delta_preset = Some(DeltaPreset::Inv100N);
        let rows = accountant_rows(&a).unwrap();
        assert_eq!(rows[0].spec.delta, 1.0 / 25_000_000.0);
    }
}
