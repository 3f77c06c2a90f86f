use num_traits::Zero;
use sosgm_core::fourier::{matrix_indices_for, Dist, HermiteBasis, InputTensor};
use sosgm_core::harness::identity_shape_of_pattern;
use sosgm_core::intersect::verify_intersection_identity;
use sosgm_core::separators::ShapeFamilies;
use sosgm_core::pseudocal::{Problem, ProblemParams};
use sosgm_core::scalar::{rat, rat_int};
use sosgm_core::shape::TypeTable;
use num_rational::BigRational;

#[test]
#[ignore]
fn probe_failing_identity_triples() {
    let n = 4u64;
    let table = TypeTable::single(n);
    let p = ProblemParams {
        problem: Problem::Plds,
        table: table.clone(),
        planted_size: rat_int(2),
        density: rat(3, 4),
        signal: BigRational::zero(),
        slack: rat(1, 2),
        arity: 2,
        d_sos: 2,
        d_v: 2,
        d_e: 1,
        normalize: false,
    };
    let fam = ShapeFamilies::build(p.family_config(None)).unwrap();
    let x = InputTensor::random(&table, vec![0, 0], false, Dist::Rademacher, HermiteBasis::Orthonormal, 1, 1234);
    for pat in &fam.mid_patterns {
        let lefts = fam.left_of(pat);
        let mut mids: Vec<_> = fam.middle_of(pat).to_vec();
        mids.push(identity_shape_of_pattern(pat, false));
        for sigma in lefts {
            for tau in &mids {
                for sigma2 in lefts {
                    let mut g = matrix_indices_for(&sigma.u, &table);
                    g.extend(matrix_indices_for(&sigma2.u, &table));
                    g.sort();
                    g.dedup();
                    let r = verify_intersection_identity(sigma, tau, sigma2, &x, &table, &g).unwrap();
                    if !r.is_zero() {
                        println!("== FAILING TRIPLE residual {r}");
                        println!("sigma:\n{}", sigma.to_text());
                        println!("tau:\n{}", tau.to_text());
                        println!("sigma2:\n{}", sigma2.to_text());
                    }
                }
            }
        }
    }
}
