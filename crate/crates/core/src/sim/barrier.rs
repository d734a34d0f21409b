//! Good points, NE-barriers and NW-gates of the delta-West graphical
//! construction.

use serde::{Deserialize, Serialize};

use super::{ClockKind, Engine, Timeline, check_compatible};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Window};
use crate::models::{ModelKind, ModelSpec};

/// `e^{-KAPPA} = 0.8`, comfortably above the oriented percolation threshold.
pub const KAPPA: f64 = 0.223_143_551_314_209_7;

/// Default block length `floor(KAPPA / delta)`.
pub fn default_ell(delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta {delta} must be positive")));
    }
    Ok((KAPPA / delta).floor().max(1.0))
}

/// Cell `(i, j)` is good iff the West clock at site `i` has no ring in
/// `[j ell, (j+1) ell)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodPointGrid {
    pub ell: f64,
    pub window: Window,
    pub rows: usize,
    /// Row-major: `cells[j * window.len() + i]`.
    pub cells: Vec<bool>,
}

impl GoodPointGrid {
    pub fn from_cells(ell: f64, window: Window, rows: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * window.len() {
            return Err(Error::InvalidParameter("cell count does not match the grid shape".into()));
        }
        Ok(GoodPointGrid { ell, window, rows, cells })
    }

    pub fn cols(&self) -> usize {
        self.window.len()
    }

    pub fn good(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.cols() + i]
    }

    pub fn good_fraction(&self) -> f64 {
        self.cells.iter().filter(|&&c| c).count() as f64 / self.cells.len().max(1) as f64
    }
}

pub fn good_point_grid(timeline: &Timeline, ell: f64) -> Result<GoodPointGrid> {
    if timeline.model.kind != ModelKind::DeltaWest {
        return Err(Error::UnsupportedModel(format!("{} has no West clock", timeline.model.kind)));
    }
    if !(ell > 0.0) {
        return Err(Error::InvalidParameter(format!("ell {ell} must be positive")));
    }
    let rows = (timeline.horizon / ell).floor() as usize;
    let cols = timeline.window.len();
    let mut cells = vec![true; rows * cols];
    for s in timeline.streams.iter().filter(|s| s.clock == ClockKind::West) {
        for &t in &s.times {
            let j = (t / ell).floor() as usize;
            if j < rows {
                cells[j * cols + s.unit] = false;
            }
        }
    }
    Ok(GoodPointGrid { ell, window: timeline.window, rows, cells })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BarrierKind {
    #[serde(rename = "NE-barrier")]
    NeBarrier,
    #[serde(rename = "NW-gate")]
    NwGate,
}

/// Oriented staircase path from time 0 to `rows * ell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierPath {
    pub kind: BarrierKind,
    pub ell: f64,
    pub start_site: Site,
    /// Corners `(site, time)`; times are multiples of `ell`.
    pub corners: Vec<(Site, f64)>,
    /// Spatial position during row `j`, i.e. on `[j ell, (j+1) ell)`.
    pub columns: Vec<Site>,
    pub good: bool,
}

impl BarrierPath {
    /// Position at time `s` (left limit at multiples of `ell`).
    pub fn position(&self, s: f64) -> Site {
        let j = if s <= 0.0 { 0 } else { ((s / self.ell).ceil() as usize).saturating_sub(1) };
        self.columns[j.min(self.columns.len() - 1)]
    }

    /// True iff no West ring lies on a vertical segment.
    pub fn good_on(&self, timeline: &Timeline) -> bool {
        self.columns.iter().enumerate().all(|(j, &x)| {
            let (a, b) = (j as f64 * self.ell, (j + 1) as f64 * self.ell);
            timeline
                .stream(x, ClockKind::West)
                .is_none_or(|s| s.times.iter().all(|&t| t < a || t >= b))
        })
    }
}

/// Depth-first search for an oriented path of good cells from row 0 to the
/// top row. Start sites are tried left to right; from each cell the North
/// step is tried before the lateral one.
pub fn find_barrier(grid: &GoodPointGrid, kind: BarrierKind, start_region: (Site, Site)) -> Result<Option<BarrierPath>> {
    let (a, b) = start_region;
    if a > b {
        return Err(Error::InvalidParameter(format!("empty start region [{a}, {b}]")));
    }
    if grid.rows == 0 {
        return Err(Error::InvalidParameter("grid has no complete row".into()));
    }
    let w = grid.window;
    let (a, b) = (a.max(w.lo()), b.min(w.hi()));
    if a > b {
        return Ok(None);
    }
    let cols = grid.cols();
    let step: isize = match kind {
        BarrierKind::NeBarrier => 1,
        BarrierKind::NwGate => -1,
    };
    let mut dead = vec![false; grid.cells.len()];
    for start in (a - w.lo()) as usize..=(b - w.lo()) as usize {
        if !grid.good(start, 0) || dead[start] {
            continue;
        }
        // stack of (i, j, next move to try: 0 north, 1 lateral, 2 exhausted)
        let mut stack: Vec<(usize, usize, u8)> = vec![(start, 0, 0)];
        while let Some(top) = stack.last_mut() {
            let (i, j, mv) = *top;
            if j + 1 == grid.rows {
                return Ok(Some(assemble(grid, kind, &stack)));
            }
            top.2 += 1;
            let next = match mv {
                0 => Some((i, j + 1)),
                1 => {
                    let ni = i as isize + step;
                    (ni >= 0 && (ni as usize) < cols).then_some((ni as usize, j))
                }
                _ => {
                    dead[j * cols + i] = true;
                    stack.pop();
                    continue;
                }
            };
            if let Some((ni, nj)) = next {
                let id = nj * cols + ni;
                if grid.cells[id] && !dead[id] {
                    stack.push((ni, nj, 0));
                }
            }
        }
    }
    Ok(None)
}

fn assemble(grid: &GoodPointGrid, kind: BarrierKind, cells: &[(usize, usize, u8)]) -> BarrierPath {
    let w = grid.window;
    let mut columns = vec![0; grid.rows];
    for &(i, j, _) in cells {
        columns[j] = w.site(i);
    }
    let start_site = w.site(cells[0].0);
    let mut corners = vec![(start_site, 0.0)];
    let mut push = |c: (Site, f64)| {
        if corners.last() != Some(&c) {
            corners.push(c);
        }
    };
    for (j, &x) in columns.iter().enumerate() {
        push((x, j as f64 * grid.ell));
        push((x, (j + 1) as f64 * grid.ell));
    }
    // keep only the points where the direction changes
    let mut k = 1;
    while k + 1 < corners.len() {
        let (a, b, c) = (corners[k - 1], corners[k], corners[k + 1]);
        if (a.0 == b.0 && b.0 == c.0) || (a.1 == b.1 && b.1 == c.1) {
            corners.remove(k);
        } else {
            k += 1;
        }
    }
    let good = columns
        .iter()
        .enumerate()
        .all(|(j, &x)| grid.good((x - w.lo()) as usize, j));
    BarrierPath { kind, ell: grid.ell, start_site, corners, columns, good }
}

/// Timeline with every ring strictly right of the gate removed.
pub fn prune_right_of_gate(timeline: &Timeline, gate: &BarrierPath) -> Timeline {
    timeline.retain_rings(|x, _, t| x <= gate.position(t))
}

/// Checks that the states left of (and on) a good NW-gate are the same when
/// computed from the full timeline and from the pruned one, with initial
/// states allowed to differ right of the gate.
pub fn locality_holds(
    model: &ModelSpec,
    eta0: &Configuration,
    eta0_alt: &Configuration,
    bc: &BoundaryCondition,
    timeline: &Timeline,
    gate: &BarrierPath,
) -> Result<bool> {
    let w = eta0.window();
    check_compatible(model, &w, timeline)?;
    let start = gate.position(0.0);
    for x in w.lo()..=start {
        if eta0.get(x)? != eta0_alt.get(x)? {
            return Err(Error::InvalidConfiguration("initial states differ left of the gate".into()));
        }
    }
    let pruned = prune_right_of_gate(timeline, gate);
    let mut full = Engine::new(model, &w, bc, eta0.bits())?;
    let mut part = Engine::new(model, &w, bc, eta0_alt.bits())?;
    let mut rp = pruned.rings().peekable();
    for ring in timeline.rings() {
        full.apply(ring.unit, ring.clock, ring.coin);
        while let Some(r) = rp.next_if(|r| r.time <= ring.time) {
            part.apply(r.unit, r.clock, r.coin);
        }
        let g = gate.position(ring.time);
        let upto = ((g - w.lo() + 1).max(0) as usize).min(w.len());
        if full.state[..upto] != part.state[..upto] {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::build_timeline;

    fn grid_from(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> GoodPointGrid {
        let w = Window::line(0, cols as Site - 1).unwrap();
        let cells = (0..rows).flat_map(|j| (0..cols).map(move |i| (i, j))).map(|(i, j)| f(i, j)).collect();
        GoodPointGrid::from_cells(1.0, w, rows, cells).unwrap()
    }

    #[test]
    fn zero_delta_grid_is_all_good() {
        let m = ModelSpec::delta_west(0.5, 0.0).unwrap();
        let tl = build_timeline(&m, Window::line(0, 30).unwrap(), 40.0, 3).unwrap();
        let g = good_point_grid(&tl, 5.0).unwrap();
        assert_eq!(g.rows, 8);
        assert_eq!(g.good_fraction(), 1.0);
    }

    #[test]
    fn west_ring_marks_cell_bad() {
        let m = ModelSpec::delta_west(0.5, 0.5).unwrap();
        let tl = build_timeline(&m, Window::line(0, 10).unwrap(), 20.0, 3).unwrap();
        let g = good_point_grid(&tl, 2.0).unwrap();
        for s in tl.streams.iter().filter(|s| s.clock == ClockKind::West) {
            for &t in &s.times {
                let j = (t / 2.0).floor() as usize;
                if j < g.rows {
                    assert!(!g.good(s.unit, j));
                }
            }
        }
        assert!(good_point_grid(&build_timeline(&ModelSpec::east(0.5).unwrap(), tl.window, 1.0, 0).unwrap(), 1.0).is_err());
    }

    #[test]
    fn all_good_gives_vertical_path() {
        let g = grid_from(5, 6, |_, _| true);
        for kind in [BarrierKind::NeBarrier, BarrierKind::NwGate] {
            let p = find_barrier(&g, kind, (2, 4)).unwrap().unwrap();
            assert_eq!(p.start_site, 2);
            assert_eq!(p.columns, vec![2; 5]);
            assert_eq!(p.corners, vec![(2, 0.0), (2, 5.0)]);
            assert!(p.good);
        }
    }

    #[test]
    fn all_bad_gives_none() {
        let g = grid_from(5, 6, |_, _| false);
        assert!(find_barrier(&g, BarrierKind::NeBarrier, (0, 5)).unwrap().is_none());
        assert!(find_barrier(&g, BarrierKind::NeBarrier, (3, 2)).is_err());
    }

    #[test]
    fn staircase_moves_in_its_direction() {
        // a diagonal corridor: row j is good only at columns j and j+1
        let g = grid_from(4, 6, |i, j| i == j || i == j + 1);
        let ne = find_barrier(&g, BarrierKind::NeBarrier, (0, 0)).unwrap().unwrap();
        assert!(ne.columns.windows(2).all(|c| c[1] >= c[0]));
        assert!(ne.corners.windows(2).all(|c| c[1].0 == c[0].0 || c[1].1 == c[0].1));
        assert!(ne.corners.iter().all(|&(_, t)| t.fract() == 0.0));
        assert!(find_barrier(&g, BarrierKind::NwGate, (0, 0)).unwrap().is_none());
    }

    #[test]
    fn supercritical_grids_percolate() {
        let mut r = crate::rng::stream(17, 0, 0);
        let p = (-0.2f64).exp();
        let mut found = 0;
        for _ in 0..100 {
            let cells: Vec<bool> = (0..100 * 50).map(|_| crate::rng::uniform(&mut r) < p).collect();
            let g = GoodPointGrid::from_cells(1.0, Window::line(0, 99).unwrap(), 50, cells).unwrap();
            if find_barrier(&g, BarrierKind::NeBarrier, (0, 99)).unwrap().is_some() {
                found += 1;
            }
        }
        assert!(found >= 95, "{found}");
    }

    #[test]
    fn gate_locality() {
        let delta = 0.05;
        let m = ModelSpec::delta_west(0.4, delta).unwrap();
        let w = Window::line(-20, 20).unwrap();
        let mut checked = 0;
        for seed in 0..30 {
            let tl = build_timeline(&m, w, 30.0, seed).unwrap();
            let g = good_point_grid(&tl, 3.0).unwrap();
            let Some(gate) = find_barrier(&g, BarrierKind::NwGate, (0, 10)).unwrap() else { continue };
            assert!(gate.good_on(&tl));
            let mut r = crate::rng::stream(seed, 1, 9);
            let bits: Vec<u8> = (0..w.len()).map(|_| crate::rng::bernoulli(&mut r, 0.6) as u8).collect();
            let eta0 = Configuration::from_bits(w, &bits).unwrap();
            let mut alt = eta0.clone();
            for x in gate.start_site + 1..=w.hi() {
                alt = alt.flip(x).unwrap();
            }
            assert!(locality_holds(&m, &eta0, &alt, &BoundaryCondition::INFECTED, &tl, &gate).unwrap());
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn default_block_length() {
        assert_eq!(default_ell(0.1).unwrap(), 2.0);
        assert_eq!(default_ell(0.01).unwrap(), 22.0);
        assert!(((-KAPPA).exp() - 0.8).abs() < 1e-15);
    }
}
