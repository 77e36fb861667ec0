//! Sparse `B` and `D` statistics.
//!
//! For event `m` of realization `h` (type `u = u_m`), the `D` row holds, for
//! every source type `v` with `A[v][u] = 1` that occurred strictly earlier,
//! the `K` decayed counts `Σ_{l: u_l = v, t_l < t_m} e^{−kδ(t_m − t_l)}`, plus
//! the baseline slot `e^{−kγ(t_m − T₋)}` for `k = 0..=K`.
//!
//! `B` is kept per realization and per source type `v` as
//! `Σ_{m: u_m = v} f_{kδ}(T₊ − t_m)`; the adjacency mask `A[v][u]` that turns
//! it into `B_{h,u,v,k}` is applied when the statistics are projected. The
//! baseline slot is `f_{kγ}(T₊ − T₋)`.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::exec;
use crate::types::{exp_integral_unchecked, Basis, EventHistory, Hyperparams, Network, Realization};

/// Decayed counts below this are flushed to zero.
pub const UNDERFLOW: f64 = 1e-300;

/// Sparse statistics for a whole history, flattened across realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPair {
    d: usize,
    basis: Basis,
    network: Network,
    windows: Vec<(f64, f64)>,
    realization_events: Vec<usize>,
    event_type: Vec<u32>,
    event_time: Vec<f64>,
    base_decay: Vec<f64>,
    row_ptr: Vec<usize>,
    row_src: Vec<u32>,
    row_val: Vec<f64>,
    comp_ptr: Vec<usize>,
    comp_src: Vec<u32>,
    comp_val: Vec<f64>,
    comp_base: Vec<f64>,
}

/// Statistics of one realization before concatenation.
#[derive(Debug, Default)]
struct Part {
    event_type: Vec<u32>,
    event_time: Vec<f64>,
    base_decay: Vec<f64>,
    row_len: Vec<usize>,
    row_src: Vec<u32>,
    row_val: Vec<f64>,
    comp_src: Vec<u32>,
    comp_val: Vec<f64>,
    comp_base: Vec<f64>,
}

fn check_inputs(history: &EventHistory, network: &Network, hp: &Hyperparams) -> Result<()> {
    hp.validate()?;
    if history.d() != network.d() {
        return Err(Error::DimensionMismatch(format!(
            "history has d = {}, network has d = {}",
            history.d(),
            network.d()
        )));
    }
    Ok(())
}

fn base_decay_into(out: &mut Vec<f64>, basis: &Basis, age: f64) {
    let step = (-basis.gamma * age).exp();
    let mut pow = 1.0;
    for _ in 0..=basis.kernels {
        out.push(if pow < UNDERFLOW { 0.0 } else { pow });
        pow *= step;
    }
}

fn window_integrals(out: &mut Vec<f64>, basis: &Basis, real: &Realization) {
    let len = real.t_plus - real.t_minus;
    for k in 0..=basis.kernels {
        out.push(exp_integral_unchecked(k, basis.gamma, len));
    }
}

/// Adds `f_{kδ}(horizon)` for `k = 1..=K` to the compensator row of `kind`.
fn add_compensator(comp: &mut BTreeMap<u32, Vec<f64>>, basis: &Basis, kind: u32, horizon: f64) {
    let row = comp
        .entry(kind)
        .or_insert_with(|| vec![0.0; basis.kernels]);
    for (k, slot) in row.iter_mut().enumerate() {
        *slot += exp_integral_unchecked(k + 1, basis.delta, horizon);
    }
}

fn finish_compensator(part: &mut Part, comp: BTreeMap<u32, Vec<f64>>) {
    for (v, vals) in comp {
        part.comp_src.push(v);
        part.comp_val.extend(vals);
    }
}

/// Single pass over one realization using the memoryless recurrence
/// `C_v^k ← C_v^k e^{−kδ dt}` (+1 when a type-`v` event arrives).
fn stream_realization(real: &Realization, network: &Network, basis: &Basis) -> Part {
    let k_len = basis.kernels;
    let mut part = Part::default();
    // Active sources sorted by type, with their K decayed counts.
    let mut active_src: Vec<u32> = Vec::new();
    let mut active_val: Vec<f64> = Vec::new();
    // Events at the current timestamp do not excite each other; their +1 is
    // applied once time moves forward.
    let mut pending: Vec<u32> = Vec::new();
    let mut comp: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut t_cur = real.t_minus;

    for e in &real.events {
        if e.time > t_cur {
            for &v in &pending {
                let pos = match active_src.binary_search(&v) {
                    Ok(pos) => pos,
                    Err(pos) => {
                        active_src.insert(pos, v);
                        let at = pos * k_len;
                        active_val.splice(at..at, std::iter::repeat_n(0.0, k_len));
                        pos
                    }
                };
                for c in &mut active_val[pos * k_len..(pos + 1) * k_len] {
                    *c += 1.0;
                }
            }
            pending.clear();

            let step = (-basis.delta * (e.time - t_cur)).exp();
            let mut keep = 0;
            for a in 0..active_src.len() {
                let vals = &mut active_val[a * k_len..(a + 1) * k_len];
                let mut pow = step;
                for c in vals.iter_mut() {
                    *c *= pow;
                    if *c < UNDERFLOW {
                        *c = 0.0;
                    }
                    pow *= step;
                }
                // k = 1 decays slowest: once it is gone the whole row is.
                if vals[0] > 0.0 {
                    if keep != a {
                        active_src[keep] = active_src[a];
                        active_val.copy_within(a * k_len..(a + 1) * k_len, keep * k_len);
                    }
                    keep += 1;
                }
            }
            active_src.truncate(keep);
            active_val.truncate(keep * k_len);
            t_cur = e.time;
        }

        let u = e.kind;
        let mut len = 0;
        for (a, &v) in active_src.iter().enumerate() {
            if network.has_edge(v as usize, u) {
                part.row_src.push(v);
                part.row_val
                    .extend_from_slice(&active_val[a * k_len..(a + 1) * k_len]);
                len += 1;
            }
        }
        part.row_len.push(len);
        part.event_type.push(u as u32);
        part.event_time.push(e.time);
        base_decay_into(&mut part.base_decay, basis, e.time - real.t_minus);
        add_compensator(&mut comp, basis, u as u32, real.t_plus - e.time);
        pending.push(u as u32);
    }
    window_integrals(&mut part.comp_base, basis, real);
    finish_compensator(&mut part, comp);
    part
}

/// Direct double loop over event pairs; `O(Σ n_h² K)`.
fn brute_force_realization(real: &Realization, network: &Network, basis: &Basis) -> Part {
    let k_len = basis.kernels;
    let mut part = Part::default();
    let mut comp: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (m, e) in real.events.iter().enumerate() {
        let mut row: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        for l in &real.events[..m] {
            if l.time < e.time && network.has_edge(l.kind, e.kind) {
                let vals = row.entry(l.kind as u32).or_insert_with(|| vec![0.0; k_len]);
                for (k, slot) in vals.iter_mut().enumerate() {
                    *slot += (-((k + 1) as f64) * basis.delta * (e.time - l.time)).exp();
                }
            }
        }
        part.row_len.push(row.len());
        for (v, vals) in row {
            part.row_src.push(v);
            part.row_val.extend(vals);
        }
        part.event_type.push(e.kind as u32);
        part.event_time.push(e.time);
        for k in 0..=basis.kernels {
            part.base_decay
                .push((-(k as f64) * basis.gamma * (e.time - real.t_minus)).exp());
        }
        let horizon = real.t_plus - e.time;
        let vals = comp.entry(e.kind as u32).or_insert_with(|| vec![0.0; k_len]);
        for (k, slot) in vals.iter_mut().enumerate() {
            let rate = (k + 1) as f64 * basis.delta;
            *slot += (1.0 - (-rate * horizon).exp()) / rate;
        }
    }
    let len = real.t_plus - real.t_minus;
    part.comp_base.push(len);
    for k in 1..=basis.kernels {
        let rate = k as f64 * basis.gamma;
        part.comp_base.push((1.0 - (-rate * len).exp()) / rate);
    }
    finish_compensator(&mut part, comp);
    part
}

fn assemble(history: &EventHistory, network: &Network, basis: Basis, parts: Vec<Part>) -> TensorPair {
    let n = history.num_events();
    let h_len = parts.len();
    let mut t = TensorPair {
        d: history.d(),
        basis,
        network: network.clone(),
        windows: history
            .realizations()
            .iter()
            .map(|r| (r.t_minus, r.t_plus))
            .collect(),
        realization_events: Vec::with_capacity(h_len + 1),
        event_type: Vec::with_capacity(n),
        event_time: Vec::with_capacity(n),
        base_decay: Vec::with_capacity(n * (basis.kernels + 1)),
        row_ptr: Vec::with_capacity(n + 1),
        row_src: Vec::new(),
        row_val: Vec::new(),
        comp_ptr: Vec::with_capacity(h_len + 1),
        comp_src: Vec::new(),
        comp_val: Vec::new(),
        comp_base: Vec::with_capacity(h_len * (basis.kernels + 1)),
    };
    t.realization_events.push(0);
    t.row_ptr.push(0);
    t.comp_ptr.push(0);
    for part in parts {
        t.event_type.extend(part.event_type);
        t.event_time.extend(part.event_time);
        t.base_decay.extend(part.base_decay);
        for len in part.row_len {
            let last = *t.row_ptr.last().unwrap();
            t.row_ptr.push(last + len);
        }
        t.row_src.extend(part.row_src);
        t.row_val.extend(part.row_val);
        t.comp_src.extend(part.comp_src);
        t.comp_val.extend(part.comp_val);
        t.comp_ptr.push(t.comp_src.len());
        t.comp_base.extend(part.comp_base);
        t.realization_events.push(t.event_type.len());
    }
    t
}

/// Builds both tensors with one streaming pass per realization, in
/// `O(n K σ)` time. Realizations are processed in parallel.
pub fn build_tensors(history: &EventHistory, network: &Network, hp: &Hyperparams) -> Result<TensorPair> {
    check_inputs(history, network, hp)?;
    let basis = hp.basis();
    let parts = exec::map(history.realizations(), |r| stream_realization(r, network, &basis));
    Ok(assemble(history, network, basis, parts))
}

/// Reference construction by direct summation over event pairs. Quadratic in
/// the realization length; meant for checking [`build_tensors`].
pub fn build_tensors_bruteforce(
    history: &EventHistory,
    network: &Network,
    hp: &Hyperparams,
) -> Result<TensorPair> {
    check_inputs(history, network, hp)?;
    let basis = hp.basis();
    let parts = history
        .realizations()
        .iter()
        .map(|r| brute_force_realization(r, network, &basis))
        .collect();
    Ok(assemble(history, network, basis, parts))
}

impl TensorPair {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn kernels(&self) -> usize {
        self.basis.kernels
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn num_events(&self) -> usize {
        self.event_type.len()
    }

    pub fn num_realizations(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, h: usize) -> (f64, f64) {
        self.windows[h]
    }

    /// Global event indices of realization `h`.
    pub fn realization_range(&self, h: usize) -> Range<usize> {
        self.realization_events[h]..self.realization_events[h + 1]
    }

    #[inline]
    pub fn event_type(&self, m: usize) -> usize {
        self.event_type[m] as usize
    }

    pub fn event_types(&self) -> &[u32] {
        &self.event_type
    }

    #[inline]
    pub fn event_time(&self, m: usize) -> f64 {
        self.event_time[m]
    }

    /// `e^{−kγ(t_m − T₋)}` for `k = 0..=K`.
    #[inline]
    pub fn base_decay(&self, m: usize) -> &[f64] {
        let k1 = self.basis.kernels + 1;
        &self.base_decay[m * k1..(m + 1) * k1]
    }

    /// Source types of event `m`'s row, and their `K`-vectors laid out
    /// contiguously.
    #[inline]
    pub fn row(&self, m: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.row_ptr[m], self.row_ptr[m + 1]);
        let k = self.basis.kernels;
        (&self.row_src[a..b], &self.row_val[a * k..b * k])
    }

    /// Compensator rows of realization `h`: source types and their
    /// `K`-vectors `Σ_{m: u_m = v} f_{kδ}(T₊ − t_m)`.
    pub fn compensator(&self, h: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.comp_ptr[h], self.comp_ptr[h + 1]);
        let k = self.basis.kernels;
        (&self.comp_src[a..b], &self.comp_val[a * k..b * k])
    }

    /// `f_{kγ}(T₊ − T₋)` for `k = 0..=K`.
    pub fn compensator_base(&self, h: usize) -> &[f64] {
        let k1 = self.basis.kernels + 1;
        &self.comp_base[h * k1..(h + 1) * k1]
    }

    /// Compensator statistics summed over realizations: a dense `d × K` array
    /// for the sources and the `K + 1` baseline integrals.
    pub fn aggregate_compensator(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.basis.kernels;
        let mut src = vec![0.0; self.d * k];
        let mut base = vec![0.0; k + 1];
        for h in 0..self.num_realizations() {
            let (types, vals) = self.compensator(h);
            for (a, &v) in types.iter().enumerate() {
                for kk in 0..k {
                    src[v as usize * k + kk] += vals[a * k + kk];
                }
            }
            for (b, x) in base.iter_mut().zip(self.compensator_base(h)) {
                *b += x;
            }
        }
        (src, base)
    }

    /// Fixed event blocks used by the parallel reductions.
    pub(crate) fn event_blocks(&self) -> Vec<Range<usize>> {
        exec::blocks(self.num_events(), exec::EVENT_BLOCK)
    }

    /// `D_{h,m,u,v,k}` in the augmented indexing: `v = d` is the baseline slot
    /// (`k = 0..=K`), otherwise `k = 1..=K`. Zero unless `u = u_m`.
    pub fn d_entry(&self, m: usize, u: usize, v: usize, k: usize) -> f64 {
        if u != self.event_type(m) {
            return 0.0;
        }
        if v == self.d {
            return self.base_decay(m).get(k).copied().unwrap_or(0.0);
        }
        if k == 0 || k > self.basis.kernels {
            return 0.0;
        }
        let (src, vals) = self.row(m);
        match src.binary_search(&(v as u32)) {
            Ok(a) => vals[a * self.basis.kernels + k - 1],
            Err(_) => 0.0,
        }
    }

    /// `B_{h,u,v,k}` with the adjacency mask applied; `v = d` is the baseline
    /// slot.
    pub fn b_entry(&self, h: usize, u: usize, v: usize, k: usize) -> f64 {
        if v == self.d {
            return self.compensator_base(h).get(k).copied().unwrap_or(0.0);
        }
        if k == 0 || k > self.basis.kernels || !self.network.has_edge(v, u) {
            return 0.0;
        }
        let (src, vals) = self.compensator(h);
        match src.binary_search(&(v as u32)) {
            Ok(a) => vals[a * self.basis.kernels + k - 1],
            Err(_) => 0.0,
        }
    }

    /// Every stored `D` value as `(h, m, v, k, value)`, with `m` local to its
    /// realization and `v = d` for the baseline slot.
    pub fn d_entries(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        let k_len = self.basis.kernels;
        let mut out = Vec::new();
        for h in 0..self.num_realizations() {
            let range = self.realization_range(h);
            for (local, m) in range.clone().enumerate() {
                let (src, vals) = self.row(m);
                for (a, &v) in src.iter().enumerate() {
                    for k in 0..k_len {
                        out.push((h, local, v as usize, k + 1, vals[a * k_len + k]));
                    }
                }
                for (k, &x) in self.base_decay(m).iter().enumerate() {
                    out.push((h, local, self.d, k, x));
                }
            }
        }
        out
    }

    /// Every stored `B` value as `(h, v, k, value)` (before the `u` fan-out),
    /// with `v = d` for the baseline slot.
    pub fn b_entries(&self) -> Vec<(usize, usize, usize, f64)> {
        let k_len = self.basis.kernels;
        let mut out = Vec::new();
        for h in 0..self.num_realizations() {
            let (src, vals) = self.compensator(h);
            for (a, &v) in src.iter().enumerate() {
                for k in 0..k_len {
                    out.push((h, v as usize, k + 1, vals[a * k_len + k]));
                }
            }
            for (k, &x) in self.compensator_base(h).iter().enumerate() {
                out.push((h, self.d, k, x));
            }
        }
        out
    }

    /// Number of stored `D` values (including the baseline slot).
    pub fn nnz_d(&self) -> usize {
        self.row_val.len() + self.base_decay.len()
    }

    /// Number of stored `B` values (including the baseline slot).
    pub fn nnz_b(&self) -> usize {
        self.comp_val.len() + self.comp_base.len()
    }

    /// Largest absolute entrywise difference to `other`, treating missing
    /// entries as zero. Both tensors must describe the same events.
    pub fn max_abs_diff(&self, other: &TensorPair) -> Result<f64> {
        if self.event_type != other.event_type || self.windows != other.windows || self.d != other.d {
            return Err(Error::DimensionMismatch("tensors describe different histories".into()));
        }
        let mut worst: f64 = 0.0;
        let mut d_map: BTreeMap<(usize, usize, usize, usize), f64> = BTreeMap::new();
        for (h, m, v, k, x) in self.d_entries() {
            d_map.insert((h, m, v, k), x);
        }
        for (h, m, v, k, x) in other.d_entries() {
            let mine = d_map.remove(&(h, m, v, k)).unwrap_or(0.0);
            worst = worst.max((mine - x).abs());
        }
        worst = d_map.values().fold(worst, |w, x| w.max(x.abs()));
        let mut b_map: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (h, v, k, x) in self.b_entries() {
            b_map.insert((h, v, k), x);
        }
        for (h, v, k, x) in other.b_entries() {
            let mine = b_map.remove(&(h, v, k)).unwrap_or(0.0);
            worst = worst.max((mine - x).abs());
        }
        Ok(b_map.values().fold(worst, |w, x| w.max(x.abs())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Event;

    fn hp(k: usize, delta: f64, gamma: f64) -> Hyperparams {
        Hyperparams {
            kernels: k,
            delta,
            gamma,
            ..Hyperparams::default()
        }
    }

    fn ev(time: f64, kind: usize) -> Event {
        Event { time, kind }
    }

    #[test]
    fn single_event_has_only_baseline_slot() {
        let h = EventHistory::new(3, vec![Realization::new(1.0, 10.0, vec![ev(3.0, 1)])]).unwrap();
        let net = Network::complete(3, true).unwrap();
        let t = build_tensors(&h, &net, &hp(3, 1.0, 0.5)).unwrap();
        let (src, _) = t.row(0);
        assert!(src.is_empty());
        for k in 0..=3 {
            let expected = (-(k as f64) * 0.5 * 2.0).exp();
            assert!((t.d_entry(0, 1, 3, k) - expected).abs() < 1e-15);
        }
        assert_eq!(t.d_entry(0, 0, 3, 0), 0.0);
    }

    #[test]
    fn same_type_pair_decays() {
        let h = EventHistory::new(1, vec![Realization::new(0.0, 5.0, vec![ev(0.0, 0), ev(1.0, 0)])]).unwrap();
        let net = Network::complete(1, true).unwrap();
        let t = build_tensors(&h, &net, &hp(3, 1.0, 1.0)).unwrap();
        for k in 1..=3 {
            assert!((t.d_entry(1, 0, 0, k) - (-(k as f64)).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn simultaneous_events_do_not_excite() {
        let h = EventHistory::new(
            2,
            vec![Realization::new(0.0, 5.0, vec![ev(1.0, 0), ev(1.0, 1), ev(2.0, 1)])],
        )
        .unwrap();
        let net = Network::complete(2, true).unwrap();
        let t = build_tensors(&h, &net, &hp(2, 1.0, 1.0)).unwrap();
        assert!(t.row(1).0.is_empty());
        assert_eq!(t.row(2).0, &[0, 1]);
        let b = build_tensors_bruteforce(&h, &net, &hp(2, 1.0, 1.0)).unwrap();
        assert!(t.max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn empty_adjacency_zeroes_excitation() {
        let h = EventHistory::new(
            2,
            vec![Realization::new(0.0, 5.0, vec![ev(0.5, 0), ev(1.0, 1), ev(2.0, 0)])],
        )
        .unwrap();
        let net = Network::empty(2).unwrap();
        let t = build_tensors(&h, &net, &hp(2, 1.0, 1.0)).unwrap();
        for m in 0..3 {
            assert!(t.row(m).0.is_empty());
        }
        for u in 0..2 {
            for v in 0..2 {
                for k in 1..=2 {
                    assert_eq!(t.b_entry(0, u, v, k), 0.0);
                }
            }
        }
    }

    #[test]
    fn empty_history_keeps_window_integrals() {
        let h = EventHistory::new(2, vec![Realization::new(0.0, 4.0, vec![])]).unwrap();
        let net = Network::complete(2, true).unwrap();
        let hp = hp(2, 1.0, 0.5);
        let t = build_tensors(&h, &net, &hp).unwrap();
        let b = build_tensors_bruteforce(&h, &net, &hp).unwrap();
        assert_eq!(t.num_events(), 0);
        assert_eq!(t.b_entries().len(), 3);
        assert_eq!(t.b_entry(0, 0, 2, 0), 4.0);
        assert!((t.b_entry(0, 1, 2, 2) - (1.0 - (-4.0f64).exp())).abs() < 1e-15);
        assert!(t.max_abs_diff(&b).unwrap() < 1e-15);
    }

    #[test]
    fn long_gaps_flush_to_zero() {
        let h = EventHistory::new(
            1,
            vec![Realization::new(0.0, 2000.0, vec![ev(0.0, 0), ev(1000.0, 0)])],
        )
        .unwrap();
        let net = Network::complete(1, true).unwrap();
        let t = build_tensors(&h, &net, &hp(2, 1.0, 1.0)).unwrap();
        assert!(t.row(1).0.is_empty());
    }

    #[test]
    fn masking_uses_source_to_target_direction() {
        // 0 excites 1 only.
        let net = Network::from_edges(2, [(0, 1)]).unwrap();
        let h = EventHistory::new(
            2,
            vec![Realization::new(0.0, 3.0, vec![ev(0.0, 1), ev(0.5, 0), ev(1.0, 1), ev(2.0, 0)])],
        )
        .unwrap();
        let t = build_tensors(&h, &net, &hp(1, 1.0, 1.0)).unwrap();
        assert!(t.row(1).0.is_empty());
        assert_eq!(t.row(2).0, &[0]);
        assert!(t.row(3).0.is_empty());
        assert!(t.b_entry(0, 1, 0, 1) > 0.0);
        assert_eq!(t.b_entry(0, 0, 1, 1), 0.0);
    }
}
