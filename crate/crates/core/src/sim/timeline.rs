use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Site, Window};
use crate::models::{ModelKind, ModelSpec};
use crate::rng;

/// Clock types of the graphical construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// The single unit clock of FA-1f, East and East-polluted.
    Main,
    /// BABP clock legal when the left neighbour is infected.
    LeftNeighbor,
    /// BABP clock legal when the right neighbour is infected.
    RightNeighbor,
    /// Delta-West clock of rate 1 reading the left neighbour.
    East,
    /// Delta-West clock of rate delta reading the right neighbour.
    West,
    Create,
    Annihilate,
    Swap,
}

impl ClockKind {
    pub fn tag(self) -> u64 {
        match self {
            ClockKind::Main => 1,
            ClockKind::LeftNeighbor => 2,
            ClockKind::RightNeighbor => 3,
            ClockKind::East => 4,
            ClockKind::West => 5,
            ClockKind::Create => 6,
            ClockKind::Annihilate => 7,
            ClockKind::Swap => 8,
        }
    }
}

/// Clock types and rates attached to each site (or edge, for the DFP).
pub fn clocks_for(model: &ModelSpec) -> Result<Vec<(ClockKind, f64)>> {
    Ok(match model.kind {
        ModelKind::Fa1f | ModelKind::East | ModelKind::EastPolluted => vec![(ClockKind::Main, 1.0)],
        ModelKind::Babp => vec![(ClockKind::LeftNeighbor, 1.0), (ClockKind::RightNeighbor, 1.0)],
        ModelKind::DeltaWest => vec![(ClockKind::East, 1.0), (ClockKind::West, model.delta)],
        ModelKind::Dfp => {
            let r = model.dfp_rates()?;
            vec![(ClockKind::Create, r.r_create), (ClockKind::Annihilate, r.r_annihilate), (ClockKind::Swap, r.r_swap)]
        }
    })
}

/// Ring times of one clock with their coin tosses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingStream {
    /// Window index of the site, or of the left end of the edge.
    pub unit: usize,
    pub clock: ClockKind,
    pub rate: f64,
    pub times: Vec<f64>,
    pub coins: Vec<u8>,
}

/// One ring in the global time order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ring {
    pub time: f64,
    pub unit: usize,
    pub clock: ClockKind,
    pub coin: u8,
    pub stream: usize,
    pub index: usize,
}

/// The realized graphical construction on a window up to a horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub window: Window,
    pub horizon: f64,
    pub seed: u64,
    pub model: ModelSpec,
    pub streams: Vec<RingStream>,
}

fn units(model: &ModelSpec, window: &Window) -> usize {
    let n = window.len();
    if model.is_edge_model() {
        if window.is_circle() { n } else { n - 1 }
    } else {
        n
    }
}

/// Generates one clock: ring `k` consumes the `2k`-th and `2k+1`-th words of
/// its stream (gap, coin), so rings are addressable by index.
fn generate_stream(seed: u64, site: Site, clock: ClockKind, rate: f64, horizon: f64, p: f64, unit: usize) -> RingStream {
    let mut times = Vec::new();
    let mut coins = Vec::new();
    if rate > 0.0 {
        let mut r = rng::stream(seed, site, clock.tag());
        let mut t = 0.0;
        loop {
            t += rng::exponential(&mut r, rate);
            let coin = rng::bernoulli(&mut r, p) as u8;
            if t > horizon {
                break;
            }
            times.push(t);
            coins.push(coin);
        }
    }
    RingStream { unit, clock, rate, times, coins }
}

pub fn build_timeline(model: &ModelSpec, window: Window, horizon: f64, seed: u64) -> Result<Timeline> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon} must be positive")));
    }
    let clocks = clocks_for(model)?;
    let p = model.p();
    let mut streams = Vec::with_capacity(units(model, &window) * clocks.len());
    for u in 0..units(model, &window) {
        let site = window.site(u);
        for &(clock, rate) in &clocks {
            streams.push(generate_stream(seed, site, clock, rate, horizon, p, u));
        }
    }
    Ok(Timeline { window, horizon, seed, model: model.clone(), streams })
}

#[derive(PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// k-way merge of the ring streams in increasing time.
pub struct RingIter<'a> {
    timeline: &'a Timeline,
    heap: BinaryHeap<Reverse<Key>>,
    pos: Vec<usize>,
}

impl Iterator for RingIter<'_> {
    type Item = Ring;

    fn next(&mut self) -> Option<Ring> {
        let Reverse(Key(time, s)) = self.heap.pop()?;
        let stream = &self.timeline.streams[s];
        let k = self.pos[s];
        self.pos[s] += 1;
        if let Some(&t) = stream.times.get(k + 1) {
            self.heap.push(Reverse(Key(t, s)));
        }
        Some(Ring { time, unit: stream.unit, clock: stream.clock, coin: stream.coins[k], stream: s, index: k })
    }
}

impl Timeline {
    pub fn rings(&self) -> RingIter<'_> {
        let heap = self
            .streams
            .iter()
            .enumerate()
            .filter_map(|(s, st)| st.times.first().map(|&t| Reverse(Key(t, s))))
            .collect();
        RingIter { timeline: self, heap, pos: vec![0; self.streams.len()] }
    }

    pub fn ring_count(&self) -> usize {
        self.streams.iter().map(|s| s.times.len()).sum()
    }

    pub fn stream(&self, site: Site, clock: ClockKind) -> Option<&RingStream> {
        let u = self.window.index(site).ok()?;
        self.streams.iter().find(|s| s.unit == u && s.clock == clock)
    }

    /// Copy with the coin of the ring of `clock` at `site` and `time` negated.
    pub fn with_coin_flipped_at(&self, site: Site, clock: ClockKind, time: f64) -> Result<Timeline> {
        let u = self.window.index(site)?;
        let mut t = self.clone();
        let s = t
            .streams
            .iter_mut()
            .find(|s| s.unit == u && s.clock == clock)
            .ok_or_else(|| Error::InvalidParameter(format!("no {clock:?} clock at {site}")))?;
        let k = s
            .times
            .iter()
            .position(|&x| x == time)
            .ok_or_else(|| Error::InvalidParameter(format!("no ring at time {time}")))?;
        s.coins[k] ^= 1;
        Ok(t)
    }

    /// Copy keeping only the rings for which `keep(site, clock, time)` holds.
    pub fn retain_rings<F: Fn(Site, ClockKind, f64) -> bool>(&self, keep: F) -> Timeline {
        let mut t = self.clone();
        for s in &mut t.streams {
            let site = self.window.site(s.unit);
            let (times, coins): (Vec<f64>, Vec<u8>) = s
                .times
                .iter()
                .zip(&s.coins)
                .filter(|&(&time, _)| keep(site, s.clock, time))
                .map(|(&a, &b)| (a, b))
                .unzip();
            s.times = times;
            s.coins = coins;
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_clock_ring_count_mean() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let t = 3.0;
        let w = Window::line(0, 9_999).unwrap();
        let tl = build_timeline(&m, w, t, 5).unwrap();
        let mean = tl.ring_count() as f64 / 10_000.0;
        let sigma = (t / 10_000.0).sqrt();
        assert!((mean - t).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn west_clock_rate() {
        let m = ModelSpec::delta_west(0.5, 0.2).unwrap();
        let t = 5.0;
        let w = Window::line(0, 9_999).unwrap();
        let tl = build_timeline(&m, w, t, 8).unwrap();
        let west: usize = tl.streams.iter().filter(|s| s.clock == ClockKind::West).map(|s| s.times.len()).sum();
        let mean = west as f64 / 10_000.0;
        let sigma = (0.2 * t / 10_000.0).sqrt();
        assert!((mean - 0.2 * t).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn deterministic_and_ordered() {
        let m = ModelSpec::babp(0.3).unwrap();
        let w = Window::line(-4, 4).unwrap();
        let a = build_timeline(&m, w, 7.0, 99).unwrap();
        let b = build_timeline(&m, w, 7.0, 99).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let c = build_timeline(&m, w, 7.0, 100).unwrap();
        assert_ne!(a, c);
        for s in &a.streams {
            assert!(s.times.windows(2).all(|p| p[0] < p[1]));
            assert!(s.times.iter().all(|&x| x > 0.0 && x <= 7.0));
        }
        let rings: Vec<Ring> = a.rings().collect();
        assert_eq!(rings.len(), a.ring_count());
        assert!(rings.windows(2).all(|p| p[0].time <= p[1].time));
    }

    #[test]
    fn prefix_is_horizon_independent() {
        let m = ModelSpec::east(0.3).unwrap();
        let w = Window::line(0, 3).unwrap();
        let short = build_timeline(&m, w, 2.0, 4).unwrap();
        let long = build_timeline(&m, w, 6.0, 4).unwrap();
        for (s, l) in short.streams.iter().zip(&long.streams) {
            assert_eq!(&l.times[..s.times.len()], &s.times[..]);
            assert_eq!(&l.coins[..s.coins.len()], &s.coins[..]);
        }
    }

    #[test]
    fn dfp_edges() {
        let m = ModelSpec::dfp(1.0).unwrap();
        let line = build_timeline(&m, Window::line(0, 4).unwrap(), 1.0, 1).unwrap();
        assert_eq!(line.streams.len(), 4 * 3);
        let circ = build_timeline(&m, Window::circle(0, 4).unwrap(), 1.0, 1).unwrap();
        assert_eq!(circ.streams.len(), 5 * 3);
    }
}
