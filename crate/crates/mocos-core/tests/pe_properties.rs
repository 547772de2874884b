//! Spectral checks of the Laplacian positional encoding on every built-in
//! skeleton layout: each column must be a genuine unit eigenvector of the
//! normalized Laplacian with the documented sign convention.

use mocos_core::graph::{
    build_adjacency, builtin_layout, default_pe_width, normalized_laplacian, positional_encoding,
    BUILTIN_LAYOUT_NAMES,
};
use mocos_core::Tensor64;

const TOL: f64 = 1e-8;
const SIGN_TOL: f64 = 1e-9;

fn column(t: &Tensor64, c: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.at(r, c)).collect()
}

fn checked_widths(joints: usize) -> Vec<usize> {
    let mut widths = vec![1, default_pe_width(joints), joints - 1];
    widths.sort_unstable();
    widths.dedup();
    widths
}

#[test]
fn pe_columns_are_laplacian_eigenvectors() {
    for name in BUILTIN_LAYOUT_NAMES {
        let layout = builtin_layout(name).unwrap();
        let adj = build_adjacency::<f64>(&layout);
        let lap = normalized_laplacian(&adj).unwrap();
        let j = layout.joints;
        for k in checked_widths(j) {
            let pe = positional_encoding(&adj, k).unwrap();
            for c in 0..k {
                let v = column(&pe, c);
                // Unit columns make the Rayleigh quotient the eigenvalue.
                let lambda: f64 = (0..j)
                    .map(|r| v[r] * (0..j).map(|s| lap.at(r, s) * v[s]).sum::<f64>())
                    .sum();
                for r in 0..j {
                    let lv: f64 = (0..j).map(|s| lap.at(r, s) * v[s]).sum();
                    assert!(
                        (lv - lambda * v[r]).abs() <= TOL,
                        "{name} k={k} col {c}: residual {} at row {r}",
                        (lv - lambda * v[r]).abs()
                    );
                }
                // Non-trivial modes only: the zero mode is skipped.
                assert!(lambda > 1e-6, "{name} k={k} col {c}: eigenvalue {lambda}");
            }
        }
    }
}

#[test]
fn pe_columns_are_orthonormal() {
    for name in BUILTIN_LAYOUT_NAMES {
        let layout = builtin_layout(name).unwrap();
        let adj = build_adjacency::<f64>(&layout);
        for k in checked_widths(layout.joints) {
            let pe = positional_encoding(&adj, k).unwrap();
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 = (0..layout.joints).map(|r| pe.at(r, a) * pe.at(r, b)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!(
                        (dot - want).abs() <= TOL,
                        "{name} k={k}: <col {a}, col {b}> = {dot}"
                    );
                }
            }
        }
    }
}

#[test]
fn pe_sign_convention_is_deterministic() {
    for name in BUILTIN_LAYOUT_NAMES {
        let layout = builtin_layout(name).unwrap();
        let adj = build_adjacency::<f64>(&layout);
        let k = default_pe_width(layout.joints);
        let pe = positional_encoding(&adj, k).unwrap();
        for c in 0..k {
            let v = column(&pe, c);
            let lead = v.iter().find(|x| x.abs() > SIGN_TOL);
            assert!(
                matches!(lead, Some(x) if *x > 0.0),
                "{name} col {c}: leading entry {lead:?}"
            );
        }
        let again = positional_encoding::<f64>(&adj, k).unwrap();
        assert_eq!(pe.data(), again.data());
    }
}
