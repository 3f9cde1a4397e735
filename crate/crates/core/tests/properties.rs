use hpc_core::cert::{lie_derivative, Poly};
use hpc_core::equiv::{build_lts, strong_bisim, weak_bisim, Lts, LtsBounds, TermGen};
use hpc_core::parser::{parse_process, pretty_with_names, ParseOptions};
use hpc_core::syntax::{
    alpha_equivalent, free_names, normalize, refresh_bound, satisfies_barendregt, struct_congruent, substitute, Expr,
    Name, Process, Subst,
};
use hpc_core::zoo::{list_models, load, Model};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn chans() -> &'static [Name] {
    static C: OnceLock<Vec<Name>> = OnceLock::new();
    C.get_or_init(|| vec![Name::fresh("a"), Name::fresh("b")])
}

fn term(seed: u64, size: usize) -> Process {
    TermGen::new(chans(), size).term(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn round_trip(p: &Process) -> Process {
    let (text, free) = pretty_with_names(p);
    parse_process(&text, &ParseOptions { free }).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

fn lts(p: &Process) -> Lts {
    let universe = [Expr::Num(0.0), Expr::Num(1.0)];
    build_lts(p, &universe, &LtsBounds { max_states: 2000, ..Default::default() }).unwrap()
}

fn strongly(p: &Process, q: &Process) -> bool {
    let (a, b) = (lts(p), lts(q));
    strong_bisim(&a, &b).relates(a.initial, b.initial)
}

fn weakly(p: &Process, q: &Process) -> bool {
    let (a, b) = (lts(p), lts(q));
    weak_bisim(&a, &b).relates(a.initial, b.initial)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_is_commutative_and_associative(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let (p, q, r) = (term(s1, 4), term(s2, 4), term(s3, 4));
        prop_assert!(struct_congruent(&Process::par(p.clone(), q.clone()), &Process::par(q.clone(), p.clone())));
        let left = Process::par(Process::par(p.clone(), q.clone()), r.clone());
        let right = Process::par(p, Process::par(q, r));
        prop_assert!(struct_congruent(&left, &right));
    }

    #[test]
    fn sum_is_commutative(s1 in any::<u64>(), s2 in any::<u64>()) {
        let g = TermGen::new(chans(), 3);
        let m = g.sum(&mut ChaCha8Rng::seed_from_u64(s1));
        let n = g.sum(&mut ChaCha8Rng::seed_from_u64(s2));
        if let (Some(mn), Some(nm)) = (Process::plus(&m, &n), Process::plus(&n, &m)) {
            prop_assert!(struct_congruent(&mn, &nm));
        }
    }

    #[test]
    fn renaming_bound_names_is_alpha(seed in any::<u64>()) {
        let p = term(seed, 6);
        let q = refresh_bound(&p);
        prop_assert!(alpha_equivalent(&p, &q));
        prop_assert!(satisfies_barendregt(&q));
        prop_assert_eq!(free_names(&p), free_names(&q));
        prop_assert!(alpha_equivalent(&substitute(&p, &Subst::new()).unwrap(), &p));
    }

    #[test]
    fn normalize_is_an_idempotent_representative(seed in any::<u64>()) {
        let p = term(seed, 6);
        let n = normalize(&p);
        prop_assert!(struct_congruent(&p, &n));
        prop_assert!(alpha_equivalent(&normalize(&n), &n));
    }

    #[test]
    fn pretty_round_trips(seed in any::<u64>()) {
        let p = term(seed, 6);
        prop_assert!(alpha_equivalent(&round_trip(&p), &p));
    }

    #[test]
    fn bisimilarity_is_an_equivalence(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (p, q) = (term(s1, 3), term(s2, 3));
        prop_assert!(strongly(&p, &p));
        prop_assert_eq!(strongly(&p, &q), strongly(&q, &p));
        prop_assert_eq!(weakly(&p, &q), weakly(&q, &p));
        // P ∥ 0 and a congruent reordering sit in the same class as P
        let r = normalize(&Process::par(Process::nil(), p.clone()));
        prop_assert!(strongly(&p, &r));
        if strongly(&p, &q) {
            prop_assert!(strongly(&r, &q));
        }
    }

    #[test]
    fn weak_is_coarser_than_strong(s1 in any::<u64>(), s2 in any::<u64>()) {
        let (p, q) = (term(s1, 3), term(s2, 3));
        if strongly(&p, &q) {
            prop_assert!(weakly(&p, &q));
        }
        // τ.P ≈ P
        prop_assert!(weakly(&Process::tau(p.clone()), &p));
    }
}

#[test]
fn strong_is_strictly_finer() {
    let p = Process::tau(Process::output(&chans()[0], vec![Expr::Num(1.0)], Process::nil()));
    let q = Process::output(&chans()[0], vec![Expr::Num(1.0)], Process::nil());
    assert!(!strongly(&p, &q));
    assert!(weakly(&p, &q));
}

#[test]
fn every_zoo_model_round_trips() {
    for e in list_models() {
        if let Model::Process(m) = load(e.id).unwrap() {
            for p in std::iter::once(&m.main).chain(m.reference.as_ref()) {
                assert!(alpha_equivalent(&round_trip(p), p), "{}", e.id);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lie derivatives

const N: usize = 3;

fn poly(coeffs: &[f64]) -> Poly {
    // monomials of total degree ≤ 2 in three variables
    let exps: [[u32; N]; 10] =
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 0], [0, 2, 0], [0, 0, 2], [1, 1, 0], [1, 0, 1], [0, 1, 1]];
    let mut p = Poly::zero(N);
    for (e, c) in exps.iter().zip(coeffs) {
        p.add_term(e.to_vec(), *c);
    }
    p
}

fn coeffs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lie_derivative_is_linear(a in coeffs(), b in coeffs(), f in prop::collection::vec(coeffs(), N),
                                k in -2.0..2.0f64, x in prop::collection::vec(-2.0..2.0f64, N)) {
        let (pa, pb) = (poly(&a), poly(&b));
        let field: Vec<Poly> = f.iter().map(|c| poly(c)).collect();
        let lhs = lie_derivative(&pa.add(&pb.scale(k)), &field).eval(&x);
        let rhs = lie_derivative(&pa, &field).eval(&x) + k * lie_derivative(&pb, &field).eval(&x);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn lie_derivative_matches_central_difference(a in coeffs(), f in prop::collection::vec(coeffs(), N),
                                                 x in prop::collection::vec(-2.0..2.0f64, N)) {
        let (phi, field): (Poly, Vec<Poly>) = (poly(&a), f.iter().map(|c| poly(c)).collect());
        let fx: Vec<f64> = field.iter().map(|p| p.eval(&x)).collect();
        let h = 1e-4;
        let at = |s: f64| phi.eval(&x.iter().zip(&fx).map(|(xi, fi)| xi + s * fi).collect::<Vec<_>>());
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let exact = lie_derivative(&phi, &field).eval(&x);
        prop_assert!((fd - exact).abs() <= 1e-5 * (1.0 + exact.abs()), "fd {} exact {}", fd, exact);
    }
}
