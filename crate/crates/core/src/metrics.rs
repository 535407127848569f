//! Forecast accuracy (RMSE, MAPE, nMAPE) and Clarke Error Grid zoning.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Paired reference/predicted glucose values (mg/dL) for one series at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub model_id: String,
    pub series_id: String,
    pub horizon_steps: usize,
    pub reference: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl ForecastResult {
    pub fn new(
        model_id: impl Into<String>,
        series_id: impl Into<String>,
        horizon_steps: usize,
        reference: Vec<f64>,
        predicted: Vec<f64>,
    ) -> Result<Self> {
        Error::check_dim("ForecastResult", reference.len(), predicted.len())?;
        if let Some(r) = reference.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::invalid(format!("reference values must be positive, got {r}")));
        }
        if predicted.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("predicted values must be finite"));
        }
        Ok(Self {
            model_id: model_id.into(),
            series_id: series_id.into(),
            horizon_steps,
            reference,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    fn nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::invalid(format!("{what} of an empty forecast")))
        } else {
            Ok(())
        }
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.reference.iter().copied().zip(self.predicted.iter().copied())
    }
}

pub fn rmse(r: &ForecastResult) -> Result<f64> {
    r.nonempty("RMSE")?;
    let mse = r.pairs().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / r.len() as f64;
    Ok(mse.sqrt())
}

/// `100 · mean(|ref − pred| / ref)`.
pub fn mape(r: &ForecastResult) -> Result<f64> {
    r.nonempty("MAPE")?;
    if r.reference.iter().any(|v| *v <= 0.0) {
        return Err(Error::invalid("MAPE requires positive reference values"));
    }
    Ok(100.0 * r.pairs().map(|(a, b)| (a - b).abs() / a).sum::<f64>() / r.len() as f64)
}

/// Sum-normalized absolute error: `100 · Σ|ref − pred| / Σ ref`.
pub fn nmape(r: &ForecastResult) -> Result<f64> {
    r.nonempty("nMAPE")?;
    let denom: f64 = r.reference.iter().sum();
    if denom <= 0.0 {
        return Err(Error::invalid("nMAPE requires a positive reference sum"));
    }
    Ok(100.0 * r.pairs().map(|(a, b)| (a - b).abs()).sum::<f64>() / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClarkeZone {
    A,
    B,
    C,
    D,
    E,
}

impl ClarkeZone {
    pub const ALL: [ClarkeZone; 5] = [
        ClarkeZone::A,
        ClarkeZone::B,
        ClarkeZone::C,
        ClarkeZone::D,
        ClarkeZone::E,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }
}

impl fmt::Display for ClarkeZone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Clarke (1987) zone of a `(reference, prediction)` pair in mg/dL.
///
/// Rules are tested in the order A, E, C, D and anything left is B, which
/// settles points lying exactly on a boundary.
pub fn clarke_zone(reference: f64, predicted: f64) -> Result<ClarkeZone> {
    if !(reference > 0.0 && predicted > 0.0) || !reference.is_finite() || !predicted.is_finite() {
        return Err(Error::invalid(format!(
            "Clarke grid needs positive glucose values, got ref={reference}, pred={predicted}"
        )));
    }
    let (r, p) = (reference, predicted);
    let zone = if (r <= 70.0 && p <= 70.0) || (p >= 0.8 * r && p <= 1.2 * r) {
        ClarkeZone::A
    } else if (r >= 180.0 && p <= 70.0) || (r <= 70.0 && p >= 180.0) {
        ClarkeZone::E
    } else if ((70.0..=290.0).contains(&r) && p >= r + 110.0)
        || ((130.0..=180.0).contains(&r) && p <= 1.4 * r - 182.0)
    {
        ClarkeZone::C
    } else if (r >= 240.0 && (70.0..=180.0).contains(&p))
        || (r <= 175.0 / 3.0 && (70.0..=180.0).contains(&p))
        || ((175.0 / 3.0..=70.0).contains(&r) && p >= 1.2 * r)
    {
        ClarkeZone::D
    } else {
        ClarkeZone::B
    };
    Ok(zone)
}

/// Percentage of points per zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClarkeSummary {
    pub pct: [f64; 5],
    pub count: usize,
}

impl ClarkeSummary {
    pub fn from_pairs(reference: &[f64], predicted: &[f64]) -> Result<Self> {
        Error::check_dim("ClarkeSummary", reference.len(), predicted.len())?;
        if reference.is_empty() {
            return Err(Error::invalid("Clarke summary of zero points"));
        }
        let mut counts = [0usize; 5];
        for (r, p) in reference.iter().zip(predicted) {
            counts[clarke_zone(*r, *p)?.index()] += 1;
        }
        Ok(Self::from_counts(counts))
    }

    pub fn from_counts(counts: [usize; 5]) -> Self {
        let n: usize = counts.iter().sum();
        let pct = counts.map(|c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 });
        Self { pct, count: n }
    }

    pub fn get(&self, zone: ClarkeZone) -> f64 {
        self.pct[zone.index()]
    }
}

/// Clarke summary of a forecast. Predictions are floored at 1 mg/dL before
/// zoning.
pub fn clarke_summary(r: &ForecastResult) -> Result<ClarkeSummary> {
    let floored: Vec<f64> = r.predicted.iter().map(|p| p.max(1.0)).collect();
    ClarkeSummary::from_pairs(&r.reference, &floored)
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fr(reference: Vec<f64>, predicted: Vec<f64>) -> ForecastResult {
        ForecastResult::new("m", "s", 1, reference, predicted).unwrap()
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&fr(vec![100.0, 120.0], vec![100.0, 120.0])).unwrap(), 0.0);
        assert!(ForecastResult::new("m", "s", 1, vec![0.0, 0.0], vec![0.0, 0.0]).is_err());
        let v = rmse(&fr(vec![3.0, 4.0], vec![0.0, 0.0])).unwrap();
        assert!((v - 12.5f64.sqrt()).abs() < 1e-12);
        let a = rmse(&fr(vec![3.0, 4.0, 9.0], vec![1.0, 7.0, 2.0])).unwrap();
        let b = rmse(&fr(vec![9.0, 3.0, 4.0], vec![2.0, 1.0, 7.0])).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(rmse(&fr(vec![], vec![])).is_err());
    }

    #[test]
    fn mape_and_nmape_examples() {
        assert!((mape(&fr(vec![100.0, 200.0], vec![110.0, 180.0])).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(mape(&fr(vec![100.0], vec![100.0])).unwrap(), 0.0);
        let a = mape(&fr(vec![100.0, 200.0], vec![110.0, 180.0])).unwrap();
        let b = mape(&fr(vec![300.0, 600.0], vec![330.0, 540.0])).unwrap();
        assert!((a - b).abs() < 1e-12);

        assert_eq!(nmape(&fr(vec![100.0], vec![100.0])).unwrap(), 0.0);
        let r = fr(vec![100.0, 100.0], vec![90.0, 110.0]);
        assert!((nmape(&r).unwrap() - 10.0).abs() < 1e-12);
        assert!((mape(&r).unwrap() - 10.0).abs() < 1e-12);
        let r = fr(vec![50.0, 150.0], vec![60.0, 150.0]);
        assert!((nmape(&r).unwrap() - 5.0).abs() < 1e-12);
        assert!((mape(&r).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn clarke_hand_table() {
        assert_eq!(clarke_zone(100.0, 100.0).unwrap(), ClarkeZone::A);
        assert_eq!(clarke_zone(200.0, 60.0).unwrap(), ClarkeZone::E);
        assert_eq!(clarke_zone(100.0, 215.0).unwrap(), ClarkeZone::C);
        assert_eq!(clarke_zone(250.0, 100.0).unwrap(), ClarkeZone::D);
        assert_eq!(clarke_zone(165.0, 130.0).unwrap(), ClarkeZone::B);
        assert!(clarke_zone(0.0, 100.0).is_err());
        assert!(clarke_zone(100.0, -3.0).is_err());
    }

    #[test]
    fn clarke_degrades_monotonically_along_ray() {
        let zones: Vec<_> = [100.0, 130.0, 215.0]
            .iter()
            .map(|p| clarke_zone(100.0, *p).unwrap())
            .collect();
        assert_eq!(zones, vec![ClarkeZone::A, ClarkeZone::B, ClarkeZone::C]);
    }

    #[test]
    fn five_point_summary_is_uniform() {
        let s = ClarkeSummary::from_pairs(
            &[100.0, 200.0, 100.0, 250.0, 165.0],
            &[100.0, 60.0, 215.0, 100.0, 130.0],
        )
        .unwrap();
        assert_eq!(s.pct, [20.0; 5]);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[4.2]).unwrap(), (4.2, 0.0));
        assert_eq!(aggregate(&[1.0, 3.0]).unwrap(), (2.0, 1.0));
        assert_eq!(aggregate(&[7.0; 5]).unwrap().1, 0.0);
        assert!(aggregate(&[]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rmse_dominates_mae(
                pairs in proptest::collection::vec((40.0f64..400.0, 0.0f64..500.0), 1..50)
            ) {
                let (r, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let f = fr(r.clone(), p.clone());
                let mae = r.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum::<f64>() / r.len() as f64;
                prop_assert!(rmse(&f).unwrap() >= mae - 1e-9);
            }

            #[test]
            fn metrics_vanish_only_on_exact_prediction(
                r in proptest::collection::vec(40.0f64..400.0, 1..20),
                bump in 0usize..20,
                delta in 0.01f64..50.0,
            ) {
                let exact = fr(r.clone(), r.clone());
                prop_assert_eq!(rmse(&exact).unwrap(), 0.0);
                prop_assert_eq!(mape(&exact).unwrap(), 0.0);
                prop_assert_eq!(nmape(&exact).unwrap(), 0.0);
                let mut p = r.clone();
                let i = bump % p.len();
                p[i] += delta;
                let off = fr(r, p);
                prop_assert!(rmse(&off).unwrap() > 0.0);
                prop_assert!(mape(&off).unwrap() > 0.0);
                prop_assert!(nmape(&off).unwrap() > 0.0);
            }
        }
    }
}
