//! Separated trajectory families and exact small-instance checks of the
//! separated / spanning sandwich.

use std::thread;

use crate::dynamics::{time_grid, System, Trajectory};
use crate::signals::{make_piecewise_constant, tseq_alpha, tseq_uniform, TimeSequence};
use crate::switched::{switching_signal, SwitchedSystem};
use crate::{dist_inf, Error, Result};

/// Largest family the exact clique and cover searches accept.
pub const SANDWICH_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationSpec {
    pub t_end: f64,
    pub eps: f64,
    pub alpha: f64,
    /// Grace period before the threshold starts to decay. Zero for open
    /// systems.
    pub tau: f64,
}

impl SeparationSpec {
    pub fn new(t_end: f64, eps: f64, alpha: f64, tau: f64) -> Result<Self> {
        if !(t_end > 0.0) || !(eps > 0.0) || !(alpha >= 0.0) || !(tau >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need T > 0, eps > 0, alpha >= 0, tau >= 0 (got {t_end}, {eps}, {alpha}, {tau})"
            )));
        }
        Ok(Self {
            t_end,
            eps,
            alpha,
            tau,
        })
    }

    /// `scale * eps * e^{-alpha max(0, t - tau)}`.
    pub fn threshold(&self, scale: f64, t: f64) -> f64 {
        scale * self.eps * (-self.alpha * (t - self.tau).max(0.0)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilyReport {
    pub count: usize,
    pub gap_count: usize,
    /// Every pair exceeds `2 eps e^{-alpha t}` somewhere on the grid.
    pub separated: bool,
    /// Min over pairs of the max over time of `gap / threshold`.
    pub min_max_gap: f64,
    /// Min over pairs of the max over time of `gap - threshold`.
    pub margin: f64,
    pub growth_log2_per_t: f64,
}

impl FamilyReport {
    pub const CSV_HEADER: &'static str = "count,gap_count,separated,min_max_gap,margin,growth_log2_per_T";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.8e},{:.8e},{:.8e}",
            self.count, self.gap_count, self.separated, self.min_max_gap, self.margin, self.growth_log2_per_t
        )
    }
}

#[derive(Debug, Clone)]
pub struct Family {
    pub strings: Vec<String>,
    pub trajectories: Vec<Trajectory>,
    pub report: FamilyReport,
}

/// All `2^l` strings over `{a, b}` in lexicographic order.
pub fn all_strings(l: usize) -> Vec<String> {
    (0..1u64 << l)
        .map(|k| {
            (0..l)
                .map(|i| if (k >> (l - 1 - i)) & 1 == 0 { 'a' } else { 'b' })
                .collect()
        })
        .collect()
}

fn member_cap(l: usize, max_members: usize) -> Result<()> {
    let required = if l >= 127 { u128::MAX } else { 1u128 << l };
    if required > max_members as u128 {
        return Err(Error::CapExceeded {
            required,
            cap: max_members as u128,
        });
    }
    Ok(())
}

fn family_grid(tseq: &TimeSequence) -> (Vec<f64>, f64) {
    let min_gap = tseq.gaps().into_iter().fold(f64::INFINITY, f64::min);
    let dt = min_gap / 20.0;
    (time_grid(tseq.end(), dt, tseq.instants()), dt)
}

fn simulate_all<F>(strings: &[String], sim: F) -> Result<Vec<Trajectory>>
where
    F: Fn(&str) -> Result<Trajectory> + Sync,
{
    let workers = thread::available_parallelism().map_or(1, |n| n.get()).min(strings.len().max(1));
    let chunk = strings.len().div_ceil(workers).max(1);
    let sim = &sim;
    let parts: Vec<Result<Vec<Trajectory>>> = thread::scope(|s| {
        let handles: Vec<_> = strings
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|se| sim(se)).collect::<Result<Vec<_>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(strings.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn check_shared_grid(trajs: &[Trajectory]) -> Result<()> {
    if let Some(first) = trajs.first() {
        if trajs.iter().any(|t| t.times != first.times) {
            return Err(Error::InvalidArgument("trajectories must share a time grid".into()));
        }
    }
    Ok(())
}

/// Pairwise check at `2 eps e^{-alpha max(0, t - tau)}`.
pub fn separation_report(trajs: &[Trajectory], spec: &SeparationSpec, gap_count: usize) -> Result<FamilyReport> {
    check_shared_grid(trajs)?;
    let (mut ratio, mut margin) = (f64::INFINITY, f64::INFINITY);
    if let Some(first) = trajs.first() {
        let thr: Vec<f64> = first.times.iter().map(|&t| spec.threshold(2.0, t)).collect();
        for i in 0..trajs.len() {
            for j in i + 1..trajs.len() {
                let (mut r, mut m) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
                for (k, th) in thr.iter().enumerate() {
                    let g = dist_inf(&trajs[i].states[k], &trajs[j].states[k]);
                    r = r.max(g / th);
                    m = m.max(g - th);
                }
                ratio = ratio.min(r);
                margin = margin.min(m);
            }
        }
    }
    let count = trajs.len();
    Ok(FamilyReport {
        count,
        gap_count,
        separated: margin > 0.0,
        min_max_gap: ratio,
        margin,
        growth_log2_per_t: (count.max(1) as f64).log2() / spec.t_end,
    })
}

/// Scalar-input family: member `se` is driven by `a`/`b` on the gaps of
/// `tseq`. Integrates with `dt = min gap / 20` on a grid holding every
/// instant of `tseq`.
pub fn family_from_strings(
    sys: &System,
    x0: &[f64],
    tseq: &TimeSequence,
    a: f64,
    b: f64,
    spec: &SeparationSpec,
    strings: &[String],
) -> Result<Family> {
    if sys.m() != 1 {
        return Err(Error::DimensionMismatch {
            what: "input (families use scalar inputs)",
            expected: 1,
            got: sys.m(),
        });
    }
    let (times, dt) = family_grid(tseq);
    let trajectories = simulate_all(strings, |se| {
        let u = make_piecewise_constant(tseq, se, a, b)?;
        sys.integrate_on(x0, &u, times.clone(), dt)
    })?;
    let report = separation_report(&trajectories, spec, tseq.gap_count())?;
    Ok(Family {
        strings: strings.to_vec(),
        trajectories,
        report,
    })
}

/// Every string over the gaps of `tseq`, rejected when `2^l > max_members`.
pub fn build_family(
    sys: &System,
    x0: &[f64],
    tseq: &TimeSequence,
    a: f64,
    b: f64,
    spec: &SeparationSpec,
    max_members: usize,
) -> Result<Family> {
    member_cap(tseq.gap_count(), max_members)?;
    family_from_strings(sys, x0, tseq, a, b, spec, &all_strings(tseq.gap_count()))
}

/// Mode-string family for a scalar two-mode switched system: `'a'` runs mode
/// 0 and `'b'` mode 1. The dwell time is not enforced.
pub fn switched_family(
    sw: &SwitchedSystem,
    x0: f64,
    tseq: &TimeSequence,
    spec: &SeparationSpec,
    strings: &[String],
) -> Result<Family> {
    if sw.n() != 1 || sw.mode_count() != 2 {
        return Err(Error::InvalidArgument(
            "switched families need a scalar system with two modes".into(),
        ));
    }
    if x0 == 0.0 {
        return Err(Error::InvalidArgument("initial state must be nonzero".into()));
    }
    let (times, dt) = family_grid(tseq);
    let trajectories = simulate_all(strings, |se| {
        let modes: Vec<usize> = se
            .chars()
            .map(|c| match c {
                'a' => Ok(0),
                'b' => Ok(1),
                _ => Err(Error::InvalidArgument(format!("mode string must be over {{a,b}}, found {c:?}"))),
            })
            .collect::<Result<_>>()?;
        let sigma = switching_signal(tseq, &modes, 2, None)?;
        sw.simulate_on(&[x0], &sigma, times.clone(), dt)
    })?;
    let report = separation_report(&trajectories, spec, tseq.gap_count())?;
    Ok(Family {
        strings: strings.to_vec(),
        trajectories,
        report,
    })
}

/// As [`switched_family`] over all `2^l` strings.
pub fn build_switched_family(
    sw: &SwitchedSystem,
    x0: f64,
    tseq: &TimeSequence,
    spec: &SeparationSpec,
    max_members: usize,
) -> Result<Family> {
    member_cap(tseq.gap_count(), max_members)?;
    switched_family(sw, x0, tseq, spec, &all_strings(tseq.gap_count()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthRow {
    pub eps: f64,
    pub t_end: f64,
    pub alpha: f64,
    pub gap_count: usize,
    /// `log2` of the family size, which is exactly `gap_count`.
    pub log2_count: f64,
    pub slope: f64,
    /// Brute-force separation result when the family fits the cap.
    pub verified: Option<bool>,
}

impl GrowthRow {
    pub const CSV_HEADER: &'static str = "eps,T,alpha,gap_count,log2_count,slope,verified";

    pub fn csv_row(&self) -> String {
        let v = match self.verified {
            Some(true) => "true",
            Some(false) => "false",
            None => "skipped",
        };
        format!(
            "{:.8e},{:.8e},{:.8e},{},{:.8e},{:.8e},{v}",
            self.eps, self.t_end, self.alpha, self.gap_count, self.log2_count, self.slope
        )
    }
}

/// `log2(count) / T` for the scalar-input construction over every
/// `(eps, T)` pair: evenly spaced instants when `alpha = 0`, the decaying
/// recurrence otherwise. Families of at most `verify_cap` members are also
/// checked by brute force.
#[allow(clippy::too_many_arguments)]
pub fn growth_sweep(
    sys: &System,
    x0: &[f64],
    a: f64,
    b: f64,
    alpha: f64,
    eps_list: &[f64],
    t_list: &[f64],
    verify_cap: usize,
) -> Result<Vec<GrowthRow>> {
    const MAX_SWITCHES: usize = 1 << 16;
    let mut rows = Vec::new();
    for &eps in eps_list {
        for &t_end in t_list {
            let spec = SeparationSpec::new(t_end, eps, alpha, 0.0)?;
            let tseq = if alpha == 0.0 {
                if 3.0 * eps / (a - b) > t_end {
                    None
                } else {
                    Some(tseq_uniform(t_end, eps, a, b, MAX_SWITCHES)?)
                }
            } else {
                let s = tseq_alpha(t_end, eps, alpha, a, b, MAX_SWITCHES)?;
                (s.gap_count() > 0).then_some(s)
            };
            let l = tseq.as_ref().map_or(0, |s| s.gap_count());
            let verified = match &tseq {
                Some(s) if l < 64 && (1usize << l) <= verify_cap => {
                    Some(build_family(sys, x0, s, a, b, &spec, verify_cap)?.report.separated)
                }
                _ => None,
            };
            rows.push(GrowthRow {
                eps,
                t_end,
                alpha,
                gap_count: l,
                log2_count: l as f64,
                slope: l as f64 / t_end,
                verified,
            });
        }
    }
    Ok(rows)
}

/// `max_t |xi_i(t) - xi_j(t)|_inf / e^{-alpha t}` for every pair: the
/// smallest `theta` with `i` within `theta e^{-alpha t}` of `j` everywhere.
pub fn pairwise_scaled_gap(trajs: &[Trajectory], alpha: f64) -> Result<Vec<Vec<f64>>> {
    check_shared_grid(trajs)?;
    let n = trajs.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let g = trajs[i]
                .times
                .iter()
                .enumerate()
                .map(|(k, &t)| dist_inf(&trajs[i].states[k], &trajs[j].states[k]) * (alpha * t).exp())
                .fold(0.0, f64::max);
            out[i][j] = g;
            out[j][i] = g;
        }
    }
    Ok(out)
}

/// Size of a maximum clique; `adj[i]` is the neighbour bitmask of `i`.
pub fn max_clique(adj: &[u32]) -> usize {
    fn expand(adj: &[u32], size: usize, mut cand: u32, best: &mut usize) {
        if cand == 0 {
            *best = (*best).max(size);
            return;
        }
        while cand != 0 {
            if size + cand.count_ones() as usize <= *best {
                return;
            }
            let v = cand.trailing_zeros() as usize;
            cand &= !(1 << v);
            expand(adj, size + 1, cand & adj[v], best);
        }
    }
    let full = if adj.len() >= 32 { u32::MAX } else { (1u32 << adj.len()) - 1 };
    let mut best = 0;
    expand(adj, 0, full, &mut best);
    best
}

/// Size of a minimum dominating set; `cover[i]` is the bitmask of members
/// `i` covers, itself included.
pub fn min_dominating_set(cover: &[u32]) -> usize {
    let n = cover.len();
    if n == 0 {
        return 0;
    }
    let full = (1u32 << n) - 1;
    let mut best = n;
    for mask in 1..=full {
        let size = mask.count_ones() as usize;
        if size >= best {
            continue;
        }
        let mut covered = 0;
        let mut rest = mask;
        while rest != 0 {
            let v = rest.trailing_zeros();
            covered |= cover[v as usize];
            rest &= rest - 1;
        }
        if covered == full {
            best = size;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sandwich {
    pub s_sep_2eps: usize,
    pub s_star_eps: usize,
    pub s_sep_eps: usize,
}

impl Sandwich {
    /// `s_sep(2 eps) <= s*(eps) <= s_sep(eps)`.
    pub fn holds(&self) -> bool {
        self.s_sep_2eps <= self.s_star_eps && self.s_star_eps <= self.s_sep_eps
    }
}

/// Family-restricted counts: largest subset separated at `2 eps` and at
/// `eps`, and fewest members whose `eps e^{-alpha t}` tubes cover the rest.
pub fn sandwich_check(trajs: &[Trajectory], eps: f64, alpha: f64) -> Result<Sandwich> {
    if trajs.len() > SANDWICH_CAP {
        return Err(Error::CapExceeded {
            required: trajs.len() as u128,
            cap: SANDWICH_CAP as u128,
        });
    }
    if !(eps > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("need eps > 0, alpha >= 0 (got {eps}, {alpha})")));
    }
    let g = pairwise_scaled_gap(trajs, alpha)?;
    let n = trajs.len();
    let graph = |theta: f64| -> Vec<u32> {
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i && g[i][j] > theta).fold(0u32, |m, j| m | 1 << j))
            .collect()
    };
    let cover: Vec<u32> = (0..n)
        .map(|i| (0..n).filter(|&j| g[i][j] <= eps).fold(0u32, |m, j| m | 1 << j))
        .collect();
    Ok(Sandwich {
        s_sep_2eps: max_clique(&graph(2.0 * eps)),
        s_star_eps: min_dominating_set(&cover),
        s_sep_eps: max_clique(&graph(eps)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrator;
    use crate::signals::tseq_infd;
    use proptest::prelude::*;

    fn clique_oracle(adj: &[u32]) -> usize {
        let n = adj.len();
        (0u32..1 << n)
            .filter(|&s| (0..n).all(|i| s >> i & 1 == 0 || (s & !(1 << i)) & !adj[i] == 0))
            .map(|s| s.count_ones() as usize)
            .max()
            .unwrap_or(0)
    }

    fn dominating_oracle(cover: &[u32]) -> usize {
        // grow subsets by size until one covers everything
        let n = cover.len();
        let full = (1u32 << n) - 1;
        fn pick(cover: &[u32], from: usize, left: usize, acc: u32, full: u32) -> bool {
            if acc == full {
                return true;
            }
            if left == 0 {
                return false;
            }
            (from..cover.len()).any(|i| pick(cover, i + 1, left - 1, acc | cover[i], full))
        }
        (0..=n).find(|&k| pick(cover, 0, k, 0, full)).unwrap()
    }

    fn random_graph(n: usize, bits: &[bool]) -> Vec<u32> {
        let mut adj = vec![0u32; n];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                if bits[k % bits.len()] {
                    adj[i] |= 1 << j;
                    adj[j] |= 1 << i;
                }
                k += 1;
            }
        }
        adj
    }

    proptest! {
        #[test]
        fn clique_matches_brute_force(n in 1usize..11, bits in prop::collection::vec(any::<bool>(), 1..60)) {
            let adj = random_graph(n, &bits);
            prop_assert_eq!(max_clique(&adj), clique_oracle(&adj));
        }

        #[test]
        fn dominating_matches_brute_force(n in 1usize..10, bits in prop::collection::vec(any::<bool>(), 1..50)) {
            let adj = random_graph(n, &bits);
            let cover: Vec<u32> = adj.iter().enumerate().map(|(i, m)| m | 1 << i).collect();
            prop_assert_eq!(min_dominating_set(&cover), dominating_oracle(&cover));
        }
    }

    fn spec(t: f64, eps: f64, alpha: f64) -> SeparationSpec {
        SeparationSpec::new(t, eps, alpha, 0.0).unwrap()
    }

    #[test]
    fn integrator_family_of_1024_is_separated() {
        let sys = integrator(1).unwrap();
        let ts = tseq_uniform(3.0, 0.1, 1.0, 0.0, 10).unwrap();
        let fam = build_family(&sys, &[0.0], &ts, 1.0, 0.0, &spec(3.0, 0.1, 0.0), 1024).unwrap();
        assert_eq!(fam.report.count, 1024);
        assert!(fam.report.separated);
        // closest pairs differ only on the last gap: 3 eps against 2 eps
        assert!((fam.report.min_max_gap - 1.5).abs() < 1e-9, "{}", fam.report.min_max_gap);
        assert!((fam.report.growth_log2_per_t - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let sys = integrator(1).unwrap();
        let ts = tseq_uniform(3.0, 0.1, 1.0, 0.0, 10).unwrap();
        match build_family(&sys, &[0.0], &ts, 1.0, 0.0, &spec(3.0, 0.1, 0.0), 512) {
            Err(Error::CapExceeded { required, cap }) => assert_eq!((required, cap), (1024, 512)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_gap_reaches_three_eps() {
        let sys = integrator(1).unwrap();
        let eps = 0.1;
        let ts = TimeSequence::new(vec![0.0, 3.0 * eps]).unwrap();
        let fam = build_family(&sys, &[0.0], &ts, 1.0, 0.0, &spec(0.3, eps, 0.0), 2).unwrap();
        let gap = dist_inf(fam.trajectories[0].final_state(), fam.trajectories[1].final_state());
        assert!((gap - 3.0 * eps).abs() < 1e-12);
        assert!(fam.report.separated);
    }

    #[test]
    fn duplicates_are_not_separated() {
        let sys = integrator(1).unwrap();
        let ts = tseq_uniform(0.9, 0.1, 1.0, 0.0, 10).unwrap();
        let s = vec!["aba".to_string(), "aba".to_string()];
        let fam = family_from_strings(&sys, &[0.0], &ts, 1.0, 0.0, &spec(0.9, 0.1, 0.0), &s).unwrap();
        assert!(!fam.report.separated);
        assert_eq!(fam.report.min_max_gap, 0.0);
    }

    #[test]
    fn alpha_family_is_separated_and_long_enough() {
        let sys = integrator(1).unwrap();
        let (eps, alpha, t) = (0.1, 1.0, 1.0);
        let ts = tseq_alpha(t, eps, alpha, 1.0, 0.0, 64).unwrap();
        let lb = crate::signals::tseq_alpha_lower_bound(t, eps, alpha, 1.0, 0.0);
        assert!(ts.gap_count() as u64 >= lb);
        let fam = build_family(&sys, &[0.0], &ts, 1.0, 0.0, &spec(t, eps, alpha), 1 << 12).unwrap();
        assert!(fam.report.separated);
    }

    #[test]
    fn growth_slopes() {
        let sys = integrator(1).unwrap();
        let rows = growth_sweep(&sys, &[0.0], 1.0, 0.0, 0.0, &[0.1, 0.05], &[3.0, 0.2], 1024).unwrap();
        assert_eq!(rows[0].gap_count, 10);
        assert!((rows[0].slope - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[0].verified, Some(true));
        assert_eq!(rows[1].gap_count, 0);
        assert_eq!(rows[1].slope, 0.0);
        assert_eq!(rows[2].gap_count, 20);
        assert!((rows[2].slope - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[2].verified, None);
        assert!((rows[2].slope / rows[0].slope - 2.0).abs() < 0.2);
        // T = 0.2 >= tau = 0.15: one gap
        assert_eq!(rows[3].gap_count, 1);
    }

    fn identical(n: usize) -> Vec<Trajectory> {
        let t = Trajectory {
            times: vec![0.0, 1.0],
            states: vec![vec![0.0], vec![1.0]],
            step: 1.0,
        };
        vec![t; n]
    }

    #[test]
    fn sandwich_examples() {
        let s = sandwich_check(&identical(5), 0.1, 0.0).unwrap();
        assert_eq!((s.s_sep_2eps, s.s_star_eps, s.s_sep_eps), (1, 1, 1));

        let mut two = identical(2);
        two[1].states[1][0] += 0.15;
        let s = sandwich_check(&two, 0.1, 0.0).unwrap();
        assert_eq!((s.s_sep_eps, s.s_sep_2eps, s.s_star_eps), (2, 1, 2));
        assert!(s.holds());

        assert!(matches!(sandwich_check(&identical(21), 0.1, 0.0), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn integrator_family_sandwich() {
        let sys = integrator(1).unwrap();
        let ts = tseq_uniform(0.45, 0.05, 1.0, 0.0, 10).unwrap();
        let fam = build_family(&sys, &[0.0], &ts, 1.0, 0.0, &spec(0.45, 0.05, 0.0), 8).unwrap();
        assert_eq!(fam.trajectories.len(), 8);
        for alpha in [0.0, 0.5] {
            let s = sandwich_check(&fam.trajectories, 0.1, alpha).unwrap();
            assert!(s.holds(), "{s:?}");
            assert!(s.s_sep_2eps <= s.s_sep_eps);
        }
    }

    #[test]
    fn switched_family_is_separated() {
        let sw = SwitchedSystem::scalar_linear_pair(1.0, 0.5, 0.1).unwrap();
        let ts = tseq_infd(1.0, 0.1, 0.5, 1.0, 1.0, None, 64).unwrap();
        assert!(ts.gap_count() >= 2);
        let sp = SeparationSpec::new(1.0, 0.1, 0.5, 0.0).unwrap();
        let fam = build_switched_family(&sw, 1.0, &ts, &sp, 1 << 10).unwrap();
        assert_eq!(fam.report.count, 1 << ts.gap_count());
        assert!(fam.report.separated, "{:?}", fam.report);

        let same = vec!["ab".repeat(ts.gap_count())[..ts.gap_count()].to_string(); 2];
        let dup = switched_family(&sw, 1.0, &ts, &sp, &same).unwrap();
        assert!(!dup.report.separated);
    }

    #[test]
    fn doubling_x0_halves_first_gap() {
        let a = tseq_infd(1.0, 0.1, 0.5, 1.0, 1.0, None, 4).unwrap();
        let b = tseq_infd(1.0, 0.1, 0.5, 2.0, 1.0, None, 4).unwrap();
        assert!((b.gaps()[0] - a.gaps()[0] / 2.0).abs() < 1e-15);
    }
}
