use serde::{Deserialize, Serialize};

use super::{Engine, build_timeline};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, FrontSummary, Window};
use crate::models::ModelSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontSample {
    pub t: f64,
    #[serde(flatten)]
    pub fronts: FrontSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontTrace {
    pub window: Window,
    pub seed: u64,
    pub samples: Vec<FrontSample>,
    /// An infection reached the first or last window site, so truncation may
    /// have influenced the trace.
    pub edge_reached: bool,
    /// Every infection disappeared.
    pub extinct: bool,
}

impl FrontTrace {
    pub fn last(&self) -> &FrontSample {
        self.samples.last().expect("trace has at least the t=0 sample")
    }

    /// CSV rows `t,x_minus,x_plus,y,d`; missing values are left empty.
    pub fn csv_rows(&self) -> String {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        let mut s = String::from("t,x_minus,x_plus,y,d\n");
        for smp in &self.samples {
            let f = &smp.fronts;
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                smp.t,
                opt(f.x_minus),
                opt(f.x_plus),
                opt(f.y),
                opt(f.d)
            ));
        }
        s
    }
}

/// `[min(lo,0) - ceil(M T), max(hi,0) + ceil(M T)]`, the window used for a
/// front run of horizon `T` from a configuration on `eta_window`.
pub fn front_window(eta_window: &Window, horizon: f64, m: f64) -> Result<Window> {
    let pad = (m * horizon).ceil() as i64;
    Window::line(eta_window.lo().min(0) - pad, eta_window.hi().max(0) + pad)
}

fn summary(window: &Window, state: &[u8]) -> FrontSummary {
    let first = state.iter().position(|&b| b == 0).map(|i| window.site(i));
    let last = state.iter().rposition(|&b| b == 0).map(|i| window.site(i));
    FrontSummary::from_infections(first, last)
}

/// Samples the fronts every `sample_dt` up to `horizon` (included), with
/// healthy sites outside `eta0`'s window.
pub fn front_trace(
    model: &ModelSpec,
    eta0: &Configuration,
    horizon: f64,
    sample_dt: f64,
    seed: u64,
    m: f64,
) -> Result<FrontTrace> {
    if eta0.count_infections() == 0 {
        return Err(Error::InvalidConfiguration("front trace needs at least one infection".into()));
    }
    if !(sample_dt > 0.0) {
        return Err(Error::InvalidParameter(format!("sample_dt {sample_dt} must be positive")));
    }
    let window = front_window(&eta0.window(), horizon, m)?;
    model.validate_window(&window)?;
    let start = eta0.pad_healthy(window)?;
    let timeline = build_timeline(model, window, horizon, seed)?;
    let mut eng = Engine::new(model, &window, &BoundaryCondition::HEALTHY, start.bits())?;
    let n = window.len();
    let mut samples = Vec::new();
    let mut k = 0usize;
    let mut edge_reached = false;
    let grid = |k: usize| k as f64 * sample_dt;
    for ring in timeline.rings() {
        while grid(k) < ring.time && grid(k) <= horizon {
            samples.push(FrontSample { t: grid(k), fronts: summary(&window, &eng.state) });
            k += 1;
        }
        let out = eng.apply(ring.unit, ring.clock, ring.coin);
        if out.changed {
            let touched = |i: usize| (i == 0 || i == n - 1) && eng.state[i] == 0;
            edge_reached |= touched(out.i) || out.j.is_some_and(touched);
        }
    }
    while grid(k) <= horizon * (1.0 + 1e-12) {
        samples.push(FrontSample { t: grid(k), fronts: summary(&window, &eng.state) });
        k += 1;
    }
    let extinct = !eng.state.contains(&0);
    Ok(FrontTrace { window, seed, samples, edge_reached, extinct })
}
