//! Chart-coordinate keyed beam table.
//!
//! A chart point is turned into an integer key on a `1/k_res` grid, hashed
//! with a randomly drawn member of the family `((c a + d) mod s) mod m`, and
//! stored in a chained table. Each stored key owns a small candidate list of
//! beam indices with the chart anchors that produced them.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::ChartPoint;
use crate::error::{Error, Result};
use crate::features::dissimilarity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyGenConfig {
    /// Generating factor, at least 2.
    pub c: u32,
    /// Grid resolution: cells are `1/k_res` wide.
    pub k_res: u32,
    /// Subtracted before flooring so training coordinates are nonnegative.
    pub origin_shift: [f64; 2],
}

impl Default for KeyGenConfig {
    fn default() -> Self {
        Self {
            c: 2,
            k_res: 100,
            origin_shift: [0.0, 0.0],
        }
    }
}

impl KeyGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c < 2 {
            return Err(Error::config(format!(
                "key factor c must be >= 2, got {}",
                self.c
            )));
        }
        if self.k_res < 1 {
            return Err(Error::config("k_res must be >= 1"));
        }
        if !self.origin_shift.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("origin shift"));
        }
        self.multiplier().map(|_| ())
    }

    /// `c^(k+1)`, rejected when it leaves 128 bits.
    pub fn multiplier(&self) -> Result<u128> {
        (self.c as u128).checked_pow(self.k_res + 1).ok_or_else(|| {
            Error::config(format!(
                "c^(k+1) overflows for c={} k={}",
                self.c, self.k_res
            ))
        })
    }

    /// Same factors with the origin moved to the componentwise minimum of `points`.
    pub fn fitted(&self, points: &[ChartPoint]) -> Self {
        let mut o = [f64::INFINITY; 2];
        for p in points {
            o[0] = o[0].min(p[0]);
            o[1] = o[1].min(p[1]);
        }
        if !o.iter().all(|v| v.is_finite()) {
            o = [0.0, 0.0];
        }
        Self {
            origin_shift: o,
            ..*self
        }
    }
}

/// `c^(k+1) * (floor(k (y1-o1)) + floor(k (y2-o2)))`.
///
/// Floors below zero (points left of the training origin) are clamped to 0.
pub fn make_key(y: ChartPoint, cfg: &KeyGenConfig) -> Result<u128> {
    if !(y[0].is_finite() && y[1].is_finite()) {
        return Err(Error::NonFinite("chart point"));
    }
    let mult = cfg.multiplier()?;
    let k = cfg.k_res as f64;
    let cell = |v: f64, o: f64| -> u128 {
        let f = (k * (v - o)).floor();
        if f <= 0.0 {
            0
        } else {
            f.min(u64::MAX as f64) as u128
        }
    };
    let sum = cell(y[0], cfg.origin_shift[0]) + cell(y[1], cfg.origin_shift[1]);
    sum.checked_mul(mult)
        .ok_or_else(|| Error::config("key overflows 128 bits; lower k_res or c"))
}

fn add_mod(a: u128, b: u128, m: u128) -> u128 {
    // a, b < m; a wrapped sum is still exact after subtracting m
    let (s, wrapped) = a.overflowing_add(b);
    if wrapped || s >= m {
        s.wrapping_sub(m)
    } else {
        s
    }
}

/// `a * b mod m` without a 256-bit intermediate.
pub fn mul_mod(a: u128, b: u128, m: u128) -> u128 {
    let mut a = a % m;
    let mut b = b % m;
    if let Some(p) = a.checked_mul(b) {
        return p % m;
    }
    let mut r = 0;
    while b > 0 {
        if b & 1 == 1 {
            r = add_mod(r, a, m);
        }
        a = add_mod(a, a, m);
        b >>= 1;
    }
    r
}

fn pow_mod(mut base: u128, mut exp: u128, m: u128) -> u128 {
    let mut r = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            r = mul_mod(r, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    r
}

const SMALL_PRIMES: [u128; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// Miller-Rabin with the first 24 primes as bases. Exact below 3.3e24; above
/// that a composite passes with probability below 4^-24.
pub fn is_prime(n: u128) -> bool {
    if n < 2 {
        return false;
    }
    for &p in &SMALL_PRIMES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    'bases: for &a in &SMALL_PRIMES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than `n`.
pub fn next_prime_above(n: u128) -> Result<u128> {
    let mut c = n
        .checked_add(1)
        .ok_or_else(|| Error::config("no prime above u128::MAX"))?;
    loop {
        if c >= 1 << 127 {
            return Err(Error::config("prime modulus must stay below 2^127"));
        }
        if is_prime(c) {
            return Ok(c);
        }
        c += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashParams {
    pub s: u128,
    pub m: usize,
    pub c: u128,
    pub d: u128,
}

impl HashParams {
    /// Checked constructor: `s` prime, `s > m >= 1`, `1 <= c < s`, `d < s`.
    pub fn new(s: u128, m: usize, c: u128, d: u128) -> Result<Self> {
        let p = Self { s, m, c, d };
        p.validate()?;
        Ok(p)
    }

    /// No checks; lets small textbook parameter sets (non-prime `s`) be evaluated.
    pub fn raw(s: u128, m: usize, c: u128, d: u128) -> Self {
        Self { s, m, c, d }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.s <= self.m as u128 {
            return Err(Error::config(format!(
                "need s > m >= 1, got s={} m={}",
                self.s, self.m
            )));
        }
        if self.s >= 1 << 127 {
            return Err(Error::config("s must stay below 2^127"));
        }
        if !is_prime(self.s) {
            return Err(Error::config(format!("s={} is not prime", self.s)));
        }
        if self.c == 0 || self.c >= self.s || self.d >= self.s {
            return Err(Error::config("need 1 <= c < s and 0 <= d < s"));
        }
        Ok(())
    }

    /// `s` = smallest prime above every key (and above `m`), `m` = smallest
    /// prime at least `n`, `c` and `d` uniform from the seeded stream.
    pub fn draw(max_key: u128, n: usize, seed: u64) -> Result<Self> {
        let m = next_prime_above(n.max(2) as u128 - 1)? as usize;
        let s = next_prime_above(max_key.max(m as u128))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            s,
            m,
            c: rng.random_range(1..s),
            d: rng.random_range(0..s),
        })
    }

    pub fn hash(&self, key: u128) -> usize {
        universal_hash(key, self)
    }
}

/// `((c a + d) mod s) mod m`.
pub fn universal_hash(a: u128, p: &HashParams) -> usize {
    let v = add_mod(mul_mod(p.c, a, p.s), p.d % p.s, p.s);
    (v % p.m as u128) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub beam: usize,
    /// Chart points that were labeled with this beam under this key.
    pub anchors: Vec<ChartPoint>,
    pub hits: u32,
    /// Set by online updates; updated beams sort first.
    pub updated: bool,
}

impl BeamEntry {
    /// Distance from `y` to the closest anchor.
    pub fn anchor_distance(&self, y: ChartPoint) -> f64 {
        self.anchors
            .iter()
            .map(|a| dissimilarity(a, &y))
            .fold(f64::INFINITY, f64::min)
    }

    fn priority_cmp(&self, other: &Self) -> std::cmp::Ordering {
        other
            .updated
            .cmp(&self.updated)
            .then(other.hits.cmp(&self.hits))
            .then(self.beam.cmp(&other.beam))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub key: u128,
    /// Kept in priority order.
    pub entries: Vec<BeamEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub delta: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub target_set_size: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            delta: f64::INFINITY,
            delta_min: 0.0,
            delta_max: f64::INFINITY,
            target_set_size: 1.0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta.is_nan() || !(self.delta_min <= self.delta && self.delta <= self.delta_max) {
            return Err(Error::config(format!(
                "delta {} outside [{}, {}]",
                self.delta, self.delta_min, self.delta_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lookup<'a> {
    /// Entries stored under the exact key, in priority order; empty on a miss.
    pub entries: &'a [BeamEntry],
    /// Chain nodes inspected.
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMapTable {
    slots: Vec<Vec<Node>>,
    params: HashParams,
    keygen: KeyGenConfig,
    n_keys: usize,
}

impl BeamMapTable {
    pub fn empty(params: HashParams, keygen: KeyGenConfig) -> Result<Self> {
        keygen.validate()?;
        if params.m == 0 {
            return Err(Error::config("slot count must be >= 1"));
        }
        Ok(Self {
            slots: vec![Vec::new(); params.m],
            params,
            keygen,
            n_keys: 0,
        })
    }

    /// Inserts every `(point, beam)` pair. Hash parameters are drawn from
    /// `hash_seed` after the keys are known.
    pub fn build(
        points: &[ChartPoint],
        beams: &[usize],
        keygen: KeyGenConfig,
        hash_seed: u64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("training chart"));
        }
        if points.len() != beams.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: beams.len(),
            });
        }
        keygen.validate()?;
        let keys: Vec<u128> = points
            .iter()
            .map(|&y| make_key(y, &keygen))
            .collect::<Result<_>>()?;
        let mut distinct = keys.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let max_key = *distinct.last().expect("nonempty");
        let params = HashParams::draw(max_key, distinct.len(), hash_seed)?;
        let mut table = Self::empty(params, keygen)?;
        for ((&y, &b), &key) in points.iter().zip(beams).zip(&keys) {
            table.insert_at(key, y, b, false);
        }
        Ok(table)
    }

    pub fn params(&self) -> &HashParams {
        &self.params
    }

    pub fn keygen(&self) -> &KeyGenConfig {
        &self.keygen
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn load_factor(&self) -> f64 {
        self.n_keys as f64 / self.slots.len() as f64
    }

    pub fn chain_lengths(&self) -> Vec<usize> {
        self.slots.iter().map(Vec::len).collect()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.slots.iter().flatten()
    }

    /// Number of distinct `(key, beam)` pairs stored.
    pub fn n_beams(&self) -> usize {
        self.nodes().map(|n| n.entries.len()).sum()
    }

    fn insert_at(&mut self, key: u128, y: ChartPoint, beam: usize, update: bool) {
        let slot = self.params.hash(key);
        let chain = &mut self.slots[slot];
        let idx = match chain.iter().position(|n| n.key == key) {
            Some(i) => i,
            None => {
                chain.push(Node {
                    key,
                    entries: Vec::new(),
                });
                self.n_keys += 1;
                chain.len() - 1
            }
        };
        let node = &mut chain[idx];
        let top = node.entries.iter().map(|e| e.hits).max().unwrap_or(0);
        match node.entries.iter_mut().find(|e| e.beam == beam) {
            Some(e) => {
                e.anchors.push(y);
                if update {
                    e.hits = top + 1;
                    e.updated = true;
                } else {
                    e.hits += 1;
                }
            }
            None => node.entries.push(BeamEntry {
                beam,
                anchors: vec![y],
                hits: if update { top + 1 } else { 1 },
                updated: update,
            }),
        }
        node.entries.sort_by(BeamEntry::priority_cmp);
    }

    pub fn lookup_key(&self, key: u128) -> Lookup<'_> {
        let chain = &self.slots[self.params.hash(key)];
        for (i, node) in chain.iter().enumerate() {
            if node.key == key {
                return Lookup {
                    entries: &node.entries,
                    probes: i + 1,
                };
            }
        }
        Lookup {
            entries: &[],
            probes: chain.len(),
        }
    }

    pub fn lookup(&self, y: ChartPoint) -> Result<Lookup<'_>> {
        Ok(self.lookup_key(make_key(y, &self.keygen)?))
    }

    /// Records `beam` at `y` ahead of every other candidate under that key.
    pub fn update(&mut self, y: ChartPoint, beam: usize) -> Result<()> {
        let key = make_key(y, &self.keygen)?;
        self.insert_at(key, y, beam, true);
        Ok(())
    }

    /// Closest anchor over the whole table as `(beam, distance)`; ties go to
    /// the first anchor in storage order.
    pub fn nearest_anchor(&self, y: ChartPoint) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for node in self.nodes() {
            for e in &node.entries {
                for a in &e.anchors {
                    let d = dissimilarity(a, &y);
                    if best.is_none_or(|(_, bd)| d < bd) {
                        best = Some((e.beam, d));
                    }
                }
            }
        }
        best
    }

    pub fn anchors(&self) -> Vec<ChartPoint> {
        self.nodes()
            .flat_map(|n| n.entries.iter().flat_map(|e| e.anchors.iter().copied()))
            .collect()
    }

    /// Mean probes of a successful lookup, averaged over stored keys.
    pub fn mean_successful_probes(&self) -> f64 {
        if self.n_keys == 0 {
            return 0.0;
        }
        let total: usize = self
            .slots
            .iter()
            .map(|chain| (1..=chain.len()).sum::<usize>())
            .sum();
        total as f64 / self.n_keys as f64
    }

    /// Checks chain placement, key uniqueness, counts and entry ordering.
    pub fn audit(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        for (slot, chain) in self.slots.iter().enumerate() {
            for node in chain {
                if self.params.hash(node.key) != slot {
                    return Err(Error::config(format!(
                        "key {} stored in wrong slot",
                        node.key
                    )));
                }
                if !seen.insert(node.key) {
                    return Err(Error::config(format!("duplicate key {}", node.key)));
                }
                if node.entries.is_empty() {
                    return Err(Error::config("node without entries"));
                }
                if node
                    .entries
                    .windows(2)
                    .any(|w| w[0].priority_cmp(&w[1]) != std::cmp::Ordering::Less)
                {
                    return Err(Error::config("entries out of priority order"));
                }
                count += 1;
            }
        }
        if count != self.n_keys {
            return Err(Error::config(format!(
                "stored {count} keys, counted {}",
                self.n_keys
            )));
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        let k = &self.keygen;
        writeln!(out, "chartbeam-table v1")?;
        writeln!(out, "hash {} {} {} {}", p.s, p.m, p.c, p.d)?;
        writeln!(
            out,
            "keygen {} {} {} {}",
            k.c, k.k_res, k.origin_shift[0], k.origin_shift[1]
        )?;
        writeln!(out, "nodes {}", self.n_keys)?;
        for (slot, chain) in self.slots.iter().enumerate() {
            for node in chain {
                writeln!(out, "node {slot} {} {}", node.key, node.entries.len())?;
                for e in &node.entries {
                    write!(
                        out,
                        "entry {} {} {} {}",
                        e.beam,
                        e.hits,
                        e.updated as u8,
                        e.anchors.len()
                    )?;
                    for a in &e.anchors {
                        write!(out, " {} {}", a[0], a[1])?;
                    }
                    writeln!(out)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
            .filter(|(_, f)| !f.is_empty());
        let mut next = |tag: &str| -> Result<(usize, Vec<&str>)> {
            let (no, f) = it
                .next()
                .ok_or_else(|| Error::parse(0, "unexpected end of table"))?;
            if f[0] != tag {
                return Err(Error::parse(no, format!("expected '{tag}'")));
            }
            Ok((no, f[1..].to_vec()))
        };
        fn num<T: std::str::FromStr>(no: usize, s: &str) -> Result<T> {
            s.parse()
                .map_err(|_| Error::parse(no, format!("bad value '{s}'")))
        }
        let (no, v) = next("chartbeam-table")?;
        if v != ["v1"] {
            return Err(Error::parse(no, "unsupported table version"));
        }
        let (no, h) = next("hash")?;
        if h.len() != 4 {
            return Err(Error::parse(no, "hash line needs s m c d"));
        }
        let params = HashParams::raw(
            num(no, h[0])?,
            num(no, h[1])?,
            num(no, h[2])?,
            num(no, h[3])?,
        );
        let (no, k) = next("keygen")?;
        if k.len() != 4 {
            return Err(Error::parse(no, "keygen line needs c k o1 o2"));
        }
        let keygen = KeyGenConfig {
            c: num(no, k[0])?,
            k_res: num(no, k[1])?,
            origin_shift: [num(no, k[2])?, num(no, k[3])?],
        };
        let mut table = Self::empty(params, keygen)?;
        let (no, n) = next("nodes")?;
        let n_nodes: usize = num(no, n.first().copied().unwrap_or(""))?;
        for _ in 0..n_nodes {
            let (no, f) = next("node")?;
            if f.len() != 3 {
                return Err(Error::parse(no, "node line needs slot key count"));
            }
            let slot: usize = num(no, f[0])?;
            let key: u128 = num(no, f[1])?;
            let n_entries: usize = num(no, f[2])?;
            if slot >= table.slots.len() || table.params.hash(key) != slot {
                return Err(Error::parse(no, "node slot does not match its key"));
            }
            let mut entries = Vec::with_capacity(n_entries);
            for _ in 0..n_entries {
                let (no, e) = next("entry")?;
                if e.len() < 4 {
                    return Err(Error::parse(no, "entry line too short"));
                }
                let n_anchors: usize = num(no, e[3])?;
                if e.len() != 4 + 2 * n_anchors {
                    return Err(Error::parse(no, "anchor count mismatch"));
                }
                let anchors = (0..n_anchors)
                    .map(|i| Ok([num(no, e[4 + 2 * i])?, num(no, e[5 + 2 * i])?]))
                    .collect::<Result<Vec<_>>>()?;
                entries.push(BeamEntry {
                    beam: num(no, e[0])?,
                    hits: num(no, e[1])?,
                    updated: num::<u8>(no, e[2])? != 0,
                    anchors,
                });
            }
            table.slots[slot].push(Node { key, entries });
            table.n_keys += 1;
        }
        table.audit()?;
        Ok(table)
    }
}

/// Entries whose nearest anchor lies within `delta` of `y`, in priority order.
pub fn select_beams(entries: &[BeamEntry], y: ChartPoint, delta: f64) -> Vec<&BeamEntry> {
    entries
        .iter()
        .filter(|e| e.anchor_distance(y) <= delta)
        .collect()
}

/// `[min, max]` pairwise distance between distinct anchors.
pub fn delta_range(anchors: &[ChartPoint]) -> Result<(f64, f64)> {
    if anchors.len() < 2 {
        return Err(Error::EmptyInput("anchor pairs"));
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            let d = dissimilarity(&anchors[i], &anchors[j]);
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    Ok((lo, hi))
}

/// Mean filtered candidate count over `queries` at radius `delta`.
pub fn mean_selected(table: &BeamMapTable, queries: &[ChartPoint], delta: f64) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyInput("validation chart"));
    }
    let mut total = 0usize;
    for &y in queries {
        total += select_beams(table.lookup(y)?.entries, y, delta).len();
    }
    Ok(total as f64 / queries.len() as f64)
}

/// Binary search (at most 30 halvings) for the smallest `delta` in the
/// anchor-distance range whose mean filtered set size reaches `target`.
/// Returns `delta_max` when the target is out of reach.
pub fn calibrate_delta(
    table: &BeamMapTable,
    validation: &[ChartPoint],
    target: f64,
) -> Result<SelectionConfig> {
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation chart"));
    }
    let (dmin, dmax) = delta_range(&table.anchors())?;
    let mut cfg = SelectionConfig {
        delta: dmax,
        delta_min: dmin,
        delta_max: dmax,
        target_set_size: target,
    };
    if mean_selected(table, validation, dmin)? >= target {
        cfg.delta = dmin;
        return Ok(cfg);
    }
    if mean_selected(table, validation, dmax)? < target {
        return Ok(cfg);
    }
    let (mut lo, mut hi) = (dmin, dmax);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if mean_selected(table, validation, mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    cfg.delta = hi;
    Ok(cfg)
}
