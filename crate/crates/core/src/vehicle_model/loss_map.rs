//! Speed-indexed quadratic loss maps.
//!
//! A loss map stores, for each shaft speed on an ascending grid, the coefficients of a
//! convex quadratic mapping mechanical output power to input power (fuel power for the
//! engine, electrical power for the motor). Queries between grid speeds interpolate the
//! coefficient triples linearly.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// `c2 * p^2 + c1 * p + c0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Quadratic {
    pub const fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    #[inline]
    pub fn eval(&self, p: f64) -> f64 {
        (self.c2 * p + self.c1) * p + self.c0
    }

    #[inline]
    pub fn slope(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }

    /// Location of the minimum, `-c1 / 2 c2`.
    #[inline]
    pub fn vertex(&self) -> f64 {
        -self.c1 / (2.0 * self.c2)
    }

    fn lerp(&self, other: &Quadratic, w: f64) -> Quadratic {
        Quadratic {
            c2: self.c2 + w * (other.c2 - self.c2),
            c1: self.c1 + w * (other.c1 - self.c1),
            c0: self.c0 + w * (other.c0 - self.c0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossMapTable {
    speeds: Vec<f64>,
    coeffs: Vec<Quadratic>,
}

#[derive(Debug, Deserialize)]
struct CoeffRow {
    omega: f64,
    c2: f64,
    c1: f64,
    c0: f64,
}

impl LossMapTable {
    pub fn new(speeds: Vec<f64>, coeffs: Vec<Quadratic>) -> Result<Self, ModelError> {
        if speeds.is_empty() || speeds.len() != coeffs.len() {
            return Err(ModelError::InvalidLossMap(format!(
                "{} speeds for {} coefficient triples",
                speeds.len(),
                coeffs.len()
            )));
        }
        if let Some(i) = speeds.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(ModelError::InvalidLossMap(format!(
                "speeds not strictly ascending at grid point {}",
                i + 1
            )));
        }
        if let Some(i) = coeffs.iter().position(|q| !(q.c2 > 0.0) || !q.c2.is_finite()) {
            return Err(ModelError::InvalidLossMap(format!(
                "c2 must be positive (grid point {i}, c2 = {})",
                coeffs[i].c2
            )));
        }
        Ok(Self { speeds, coeffs })
    }

    /// Reads a `omega,c2,c1,c0` CSV file.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, ModelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ModelError::CoeffParse { line: 1, msg: e.to_string() })?
            .clone();
        let expected = ["omega", "c2", "c1", "c0"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(ModelError::CoeffParse {
                line: 1,
                msg: format!("expected header `omega,c2,c1,c0`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut speeds = Vec::new();
        let mut coeffs = Vec::new();
        for (i, rec) in rdr.deserialize::<CoeffRow>().enumerate() {
            let line = i + 2;
            let row = rec.map_err(|e| ModelError::CoeffParse { line, msg: e.to_string() })?;
            if let Some(&last) = speeds.last() {
                if !(row.omega > last) {
                    return Err(ModelError::CoeffParse {
                        line,
                        msg: format!("speed {} not above previous {last}", row.omega),
                    });
                }
            }
            if !(row.c2 > 0.0) {
                return Err(ModelError::CoeffParse { line, msg: format!("c2 = {} is not positive", row.c2) });
            }
            speeds.push(row.omega);
            coeffs.push(Quadratic::new(row.c2, row.c1, row.c0));
        }
        Self::new(speeds, coeffs)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("omega,c2,c1,c0\n");
        for (w, q) in self.speeds.iter().zip(&self.coeffs) {
            out.push_str(&format!("{w},{:e},{},{}\n", q.c2, q.c1, q.c0));
        }
        out
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn coeffs(&self) -> &[Quadratic] {
        &self.coeffs
    }

    pub fn omega_min(&self) -> f64 {
        self.speeds[0]
    }

    pub fn omega_max(&self) -> f64 {
        *self.speeds.last().unwrap()
    }

    /// Coefficients at `omega`, clamped into the table's speed range first.
    pub fn interp(&self, omega: f64) -> Quadratic {
        let w = omega.clamp(self.omega_min(), self.omega_max());
        let hi = self.speeds.partition_point(|&s| s < w);
        if hi == 0 {
            return self.coeffs[0];
        }
        if hi == self.speeds.len() {
            return *self.coeffs.last().unwrap();
        }
        if self.speeds[hi] == w {
            return self.coeffs[hi];
        }
        let lo = hi - 1;
        let t = (w - self.speeds[lo]) / (self.speeds[hi] - self.speeds[lo]);
        self.coeffs[lo].lerp(&self.coeffs[hi], t)
    }

    /// Willans-style engine map: constant marginal fuel rate `c1`, friction/idle loss
    /// proportional to speed, `c2` sized so the peak brake efficiency is `peak_eff`.
    pub fn synthetic(speeds: Vec<f64>, c1: f64, c0: impl Fn(f64) -> f64, peak_eff: f64) -> Self {
        let coeffs = speeds
            .iter()
            .map(|&w| {
                let c0 = c0(w);
                // max_p p / (c2 p^2 + c1 p + c0) = 1 / (c1 + 2 sqrt(c0 c2))
                let half_gap = (1.0 / peak_eff - c1) / 2.0;
                Quadratic::new(half_gap * half_gap / c0, c1, c0)
            })
            .collect();
        Self::new(speeds, coeffs).expect("synthetic loss map is valid")
    }

    /// Default engine map: 11 speeds over 100..=600 rad/s, 35 % peak efficiency.
    pub fn default_engine() -> Self {
        Self::synthetic(default_speed_grid(), 2.4, |w| 20.0 * w, 0.35)
    }

    /// Default motor map over the same grid, 90 % peak efficiency.
    pub fn default_motor() -> Self {
        Self::synthetic(default_speed_grid(), 1.02, |w| 200.0 + w, 0.90)
    }
}

fn default_speed_grid() -> Vec<f64> {
    (0..11).map(|i| 100.0 + 50.0 * i as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> LossMapTable {
        LossMapTable::new(
            vec![100.0, 200.0, 400.0],
            vec![Quadratic::new(1e-5, 2.0, 100.0), Quadratic::new(3e-5, 2.5, 300.0), Quadratic::new(2e-5, 3.0, 500.0)],
        )
        .unwrap()
    }

    #[test]
    fn grid_point_returns_stored_triple() {
        let t = table();
        assert_eq!(t.interp(200.0), Quadratic::new(3e-5, 2.5, 300.0));
        assert_eq!(t.interp(100.0), t.coeffs()[0]);
        assert_eq!(t.interp(400.0), t.coeffs()[2]);
    }

    #[test]
    fn midpoint_is_mean_of_neighbours() {
        let q = table().interp(300.0);
        assert!((q.c2 - 2.5e-5).abs() < 1e-18);
        assert!((q.c1 - 2.75).abs() < 1e-14);
        assert!((q.c0 - 400.0).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_speeds_clamp() {
        let t = table();
        assert_eq!(t.interp(0.0), t.coeffs()[0]);
        assert_eq!(t.interp(1e4), t.coeffs()[2]);
    }

    #[test]
    fn quadratic_vertex_is_minimum() {
        let q = Quadratic::new(2e-5, 2.4, 1000.0);
        let v = q.vertex();
        assert!(q.slope(v).abs() < 1e-12);
        for d in [-10.0, -1.0, 1.0, 10.0] {
            assert!(q.eval(v + d) > q.eval(v));
        }
        assert_eq!(q.eval(0.0), 1000.0);
    }

    #[test]
    fn default_maps_hit_target_peak_efficiency() {
        for (t, eff) in [(LossMapTable::default_engine(), 0.35), (LossMapTable::default_motor(), 0.90)] {
            assert_eq!(t.speeds().len(), 11);
            for q in t.coeffs() {
                let p_best = (q.c0 / q.c2).sqrt();
                assert!((p_best / q.eval(p_best) - eff).abs() < 1e-12);
                assert!(q.c0 > 0.0);
            }
        }
    }

    #[test]
    fn csv_round_trip_and_line_numbers() {
        let t = LossMapTable::default_engine();
        let back = LossMapTable::from_csv_reader(t.to_csv_string().as_bytes()).unwrap();
        for (a, b) in t.coeffs().iter().zip(back.coeffs()) {
            assert!((a.c2 - b.c2).abs() <= 1e-15 * a.c2.abs());
        }

        let bad = "omega,c2,c1,c0\n100,1e-5,2,3\n200,abc,2,3\n";
        match LossMapTable::from_csv_reader(bad.as_bytes()) {
            Err(ModelError::CoeffParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let descending = "omega,c2,c1,c0\n200,1e-5,2,3\n100,1e-5,2,3\n";
        match LossMapTable::from_csv_reader(descending.as_bytes()) {
            Err(ModelError::CoeffParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let nonconvex = "omega,c2,c1,c0\n100,0,2,3\n";
        assert!(matches!(
            LossMapTable::from_csv_reader(nonconvex.as_bytes()),
            Err(ModelError::CoeffParse { line: 2, .. })
        ));
        let header = "w,a,b,c\n100,1,2,3\n";
        assert!(matches!(
            LossMapTable::from_csv_reader(header.as_bytes()),
            Err(ModelError::CoeffParse { line: 1, .. })
        ));
    }
}
