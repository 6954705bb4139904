//! Output heads over decoder states.

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::layers::{sigmoid, softmax_in_place};

fn bilinear(a: &ArrayView1<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> f64 {
    a.dot(&w.dot(b))
}

/// `p_ij = sigmoid(s_ij + s_ji)` with `s_ij = h_iᵀ W h_j`; symmetric in its
/// first two arguments by construction.
pub fn similarity_score(hi: ArrayView1<f64>, hj: ArrayView1<f64>, w: ArrayView2<f64>) -> f64 {
    // s_ij + s_ji = h_iᵀ (W + Wᵀ) h_j, which is evaluated symmetrically so the
    // result is bit-identical under swapping i and j.
    let ws = &w + &w.t();
    let a = bilinear(&hi, &ws.view(), &hj);
    let b = bilinear(&hj, &ws.view(), &hi);
    sigmoid(0.5 * (a + b))
}

/// `q_ij = sigmoid(h_iᵀ W h_j)`.
pub fn order_score(hi: ArrayView1<f64>, hj: ArrayView1<f64>, w: ArrayView2<f64>) -> f64 {
    sigmoid(bilinear(&hi, &w, &hj))
}

/// Softmax of `h W + b`.
pub fn lm_distribution(h: ArrayView1<f64>, w: &ArrayView2<f64>, b: &ArrayView1<f64>) -> Vec<f64> {
    let mut logits = (h.dot(w) + b).to_vec();
    softmax_in_place(&mut logits);
    logits
}

/// All-pairs similarity matrix; exactly symmetric.
pub(crate) fn symmetric_scores(h: &ArrayView2<f64>, w: &ArrayView2<f64>) -> Array2<f64> {
    let s = h.dot(w).dot(&h.t());
    let k = s.nrows();
    let mut p = Array2::zeros((k, k));
    for i in 0..k {
        for j in i..k {
            let v = sigmoid(s[[i, j]] + s[[j, i]]);
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
    }
    p
}

/// All ordered pairs `q_ij`; callers use the strict upper triangle.
pub(crate) fn pair_scores(h: &ArrayView2<f64>, w: &ArrayView2<f64>) -> Array2<f64> {
    h.dot(w).dot(&h.t()).mapv(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[test]
    fn similarity_closed_forms() {
        let w0 = Array2::<f64>::zeros((3, 3));
        let a = array![0.3, -1.0, 2.0];
        let b = array![1.0, 0.5, -0.2];
        assert_eq!(similarity_score(a.view(), b.view(), w0.view()), 0.5);
        let id = Array2::<f64>::eye(3);
        let u = array![1.0, 0.0, 0.0];
        let p = similarity_score(u.view(), u.view(), id.view());
        assert!((p - 0.880_797_077_977_882_4).abs() < 1e-15);
    }

    #[test]
    fn similarity_symmetric_for_asymmetric_w() {
        let w = array![[0.3, 1.2, -0.7], [0.0, 0.4, 2.1], [-1.5, 0.9, 0.1]];
        let a = array![0.3, -1.0, 2.0];
        let b = array![1.0, 0.5, -0.2];
        let ab = similarity_score(a.view(), b.view(), w.view());
        let ba = similarity_score(b.view(), a.view(), w.view());
        assert_eq!(ab.to_bits(), ba.to_bits());
    }

    #[test]
    fn order_head_identities() {
        let a = array![0.3, -1.0, 2.0];
        let b = array![1.0, 0.5, -0.2];
        let w0 = Array2::<f64>::zeros((3, 3));
        assert_eq!(order_score(a.view(), b.view(), w0.view()), 0.5);
        let w = array![[0.3, 1.2, -0.7], [0.0, 0.4, 2.1], [-1.5, 0.9, 0.1]];
        let qab = order_score(a.view(), b.view(), w.view());
        let qba = order_score(b.view(), a.view(), w.view());
        assert!((qab + qba - 1.0).abs() > 1e-3);
        let anti = &w - &w.t();
        let qab = order_score(a.view(), b.view(), anti.view());
        let qba = order_score(b.view(), a.view(), anti.view());
        assert!((qab + qba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lm_distribution_properties() {
        let h = array![0.5, -0.3];
        let w = array![[1.0, -2.0, 0.3, 0.0], [0.2, 0.1, -1.0, 3.0]];
        let b = array![0.0, 0.1, 0.2, -0.1];
        let p = lm_distribution(h.view(), &w.view(), &b.view());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
        let shifted = &b + 7.5;
        let q = lm_distribution(h.view(), &w.view(), &shifted.view());
        for (x, y) in p.iter().zip(&q) {
            assert!((x - y).abs() < 1e-12);
        }
        let logits = h.dot(&w) + &b;
        let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
        assert_eq!(argmax(&p), argmax(logits.as_slice().unwrap()));
        let zero = lm_distribution(h.view(), &Array2::zeros((2, 4)).view(), &Array1::zeros(4).view());
        assert!(zero.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn matrix_forms_match_pairwise() {
        let h = array![[0.3, -1.0, 2.0], [1.0, 0.5, -0.2], [0.0, 0.7, 0.7]];
        let w = array![[0.3, 1.2, -0.7], [0.0, 0.4, 2.1], [-1.5, 0.9, 0.1]];
        let p = symmetric_scores(&h.view(), &w.view());
        let q = pair_scores(&h.view(), &w.view());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p[[i, j]], p[[j, i]]);
                let ps = similarity_score(h.row(i), h.row(j), w.view());
                assert!((p[[i, j]] - ps).abs() < 1e-12);
                assert!((q[[i, j]] - order_score(h.row(i), h.row(j), w.view())).abs() < 1e-12);
            }
        }
    }
}
