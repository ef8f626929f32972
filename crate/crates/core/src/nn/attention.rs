use super::params::{Init, ParamGroup, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Additive value for hidden attention positions.
pub const MASK_VALUE: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionSpec {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_head: usize,
    pub n_buckets: usize,
    pub max_distance: usize,
}

impl AttentionSpec {
    pub fn new(d_model: usize, n_heads: usize, n_buckets: usize, max_distance: usize) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        if n_buckets == 0 || !n_buckets.is_multiple_of(2) {
            return Err(Error::Config(format!("relative bucket count {n_buckets} must be even")));
        }
        Ok(Self {
            d_model,
            n_heads,
            d_head: d_model / n_heads,
            n_buckets,
            max_distance,
        })
    }
}

/// T5 relative-position bucket for `relative_position = key_pos - query_pos`.
///
/// Bidirectional: the sign picks a half of the buckets. Within a half, the
/// first half of the slots hold exact distances and the rest are log-spaced
/// up to `max_distance`; anything beyond lands in the last slot.
pub fn relative_bucket(relative_position: i64, n_buckets: usize, max_distance: usize) -> usize {
    bucket_impl(relative_position, n_buckets, max_distance, true)
}

/// Unidirectional variant used by causal self-attention: only distances to
/// earlier positions are distinguished; later positions share bucket 0.
pub fn causal_relative_bucket(relative_position: i64, n_buckets: usize, max_distance: usize) -> usize {
    bucket_impl(relative_position, n_buckets, max_distance, false)
}

fn bucket_impl(relative_position: i64, n_buckets: usize, max_distance: usize, bidirectional: bool) -> usize {
    let mut n = n_buckets;
    let mut offset = 0;
    let distance = if bidirectional {
        n /= 2;
        if relative_position > 0 {
            offset = n;
        }
        relative_position.unsigned_abs() as usize
    } else {
        (-relative_position.min(0)) as usize
    };
    let max_exact = n / 2;
    if distance < max_exact {
        return offset + distance;
    }
    let scaled = (distance as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (n - max_exact) as f64;
    offset + (max_exact + scaled as usize).min(n - 1)
}

/// Learned per-head scalar bias indexed by relative-position bucket.
#[derive(Debug, Clone)]
pub struct RelativeBias {
    pub table: ParamId,
    pub spec: AttentionSpec,
    pub bidirectional: bool,
}

impl RelativeBias {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, group: ParamGroup, spec: AttentionSpec, bidirectional: bool) -> Self {
        let table = store.add(name, group, &[spec.n_buckets, spec.n_heads], Init::Normal(0.1), rng);
        Self {
            table,
            spec,
            bidirectional,
        }
    }

    /// Bias tensor `[heads, q_len, k_len]`.
    pub fn compute(&self, store: &ParamStore, q_len: usize, k_len: usize) -> Result<Tensor> {
        let mut ids = Vec::with_capacity(q_len * k_len);
        for i in 0..q_len {
            for j in 0..k_len {
                let rel = j as i64 - i as i64;
                ids.push(if self.bidirectional {
                    relative_bucket(rel, self.spec.n_buckets, self.spec.max_distance)
                } else {
                    causal_relative_bucket(rel, self.spec.n_buckets, self.spec.max_distance)
                });
            }
        }
        store
            .get(self.table)
            .embedding(&ids)?
            .reshape(&[q_len, k_len, self.spec.n_heads])?
            .permute(&[2, 0, 1])
    }
}

/// `[q_len, k_len]` additive mask hiding keys whose flag is false.
pub fn key_padding_mask(q_len: usize, visible: &[bool]) -> Tensor {
    let row: Vec<f64> = visible.iter().map(|&v| if v { 0.0 } else { MASK_VALUE }).collect();
    let data = row.iter().copied().cycle().take(q_len * visible.len()).collect();
    Tensor::new(data, &[q_len, visible.len()]).expect("mask shape")
}

/// `[n, n]` additive mask hiding future positions.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = MASK_VALUE;
        }
    }
    Tensor::new(data, &[n, n]).expect("mask shape")
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub o: ParamId,
    pub spec: AttentionSpec,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, group: ParamGroup, spec: AttentionSpec) -> Self {
        let d = spec.d_model;
        let std = 1.0 / (d as f64).sqrt();
        let mut w = |name: &str| store.add(&format!("{prefix}.{name}"), group, &[d, d], Init::Normal(std), rng);
        Self {
            q: w("q"),
            k: w("k"),
            v: w("v"),
            o: w("o"),
            spec,
        }
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.shape()[0];
        x.reshape(&[n, self.spec.n_heads, self.spec.d_head])?.permute(&[1, 0, 2])
    }

    /// Scaled dot-product attention over all heads.
    ///
    /// `position_bias` is `[heads, q_len, k_len]`; `mask` is `[q_len, k_len]`
    /// with 0 for visible and [`MASK_VALUE`] for hidden keys. Returns the
    /// projected output `[q_len, d_model]` and the attention weights
    /// `[heads, q_len, k_len]`.
    pub fn forward(
        &self,
        store: &ParamStore,
        queries: &Tensor,
        keys_values: &Tensor,
        position_bias: Option<&Tensor>,
        mask: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let d = self.spec.d_model;
        for x in [queries, keys_values] {
            if x.rank() != 2 || x.shape()[1] != d {
                return Err(Error::Shape(format!(
                    "attention input {:?} does not have width d_model = {d}",
                    x.shape()
                )));
            }
        }
        let q_len = queries.shape()[0];
        let q = self.split_heads(&queries.matmul(store.get(self.q))?)?;
        let k = self.split_heads(&keys_values.matmul(store.get(self.k))?)?;
        let v = self.split_heads(&keys_values.matmul(store.get(self.v))?)?;
        let mut scores = q.matmul_t(&k)?.scale(1.0 / (self.spec.d_head as f64).sqrt());
        if let Some(b) = position_bias {
            scores = scores.add(b)?;
        }
        if let Some(m) = mask {
            scores = scores.add(m)?;
        }
        let weights = scores.softmax(2)?;
        let context = weights.matmul(&v)?.permute(&[1, 0, 2])?.reshape(&[q_len, d])?;
        Ok((context.matmul(store.get(self.o))?, weights))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent bucket oracle: counts log-spaced boundaries instead of
    /// evaluating the closed form.
    fn oracle_bucket(rel: i64, n_buckets: usize, max_distance: usize) -> usize {
        let half = n_buckets / 2;
        let offset = if rel > 0 { half } else { 0 };
        let dist = rel.unsigned_abs() as f64;
        let exact = half / 2;
        if dist < exact as f64 {
            return offset + dist as usize;
        }
        let log_slots = half - exact;
        let mut bucket = exact;
        for i in 1..log_slots {
            let boundary = exact as f64 * (max_distance as f64 / exact as f64).powf(i as f64 / log_slots as f64);
            if dist >= boundary - 1e-9 {
                bucket = exact + i;
            }
        }
        offset + bucket
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(relative_bucket(0, 32, 128), 0);
        assert_eq!(relative_bucket(1, 32, 128), 17);
        assert_eq!(relative_bucket(-1, 32, 128), 1);
        assert_eq!(relative_bucket(1000, 32, 128), 31);
        assert_eq!(relative_bucket(-1000, 32, 128), 15);
        assert_eq!(relative_bucket(129, 32, 128), 31);
    }

    #[test]
    fn bucket_table_matches_oracle() {
        for rel in -300..=300 {
            assert_eq!(
                relative_bucket(rel, 32, 128),
                oracle_bucket(rel, 32, 128),
                "relative position {rel}"
            );
        }
    }

    #[test]
    fn causal_buckets_ignore_future() {
        assert_eq!(causal_relative_bucket(5, 32, 128), 0);
        assert_eq!(causal_relative_bucket(-3, 32, 128), 3);
        assert_eq!(causal_relative_bucket(-1000, 32, 128), 31);
    }

    fn attn(seed: u64) -> (ParamStore, MultiHeadAttention) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(seed);
        let spec = AttentionSpec::new(8, 2, 8, 16).unwrap();
        let a = MultiHeadAttention::new(&mut store, &mut rng, "a", ParamGroup::Encoder, spec);
        (store, a)
    }

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new((0..n).map(|_| rng.normal()).collect(), shape).unwrap()
    }

    #[test]
    fn single_visible_key_returns_its_value() {
        let (store, a) = attn(1);
        let mut rng = Rng::new(2);
        let xq = random(&mut rng, &[3, 8]);
        let xkv = random(&mut rng, &[4, 8]);
        let mask = key_padding_mask(3, &[false, false, true, false]);
        let (out, w) = a.forward(&store, &xq, &xkv, None, Some(&mask)).unwrap();
        let want = xkv
            .narrow(2, 1)
            .unwrap()
            .matmul(store.get(a.v))
            .unwrap()
            .matmul(store.get(a.o))
            .unwrap();
        for r in 0..3 {
            for j in 0..8 {
                assert!((out.data()[r * 8 + j] - want.data()[j]).abs() < 1e-12);
            }
        }
        for (i, p) in w.data().iter().enumerate() {
            if i % 4 != 2 {
                assert!(*p <= 1e-12);
            }
        }
    }

    #[test]
    fn uniform_keys_give_uniform_weights() {
        let (store, a) = attn(3);
        let mut rng = Rng::new(4);
        let xq = random(&mut rng, &[2, 8]);
        let row = random(&mut rng, &[1, 8]);
        let xkv = Tensor::concat(&[row.clone(), row.clone(), row.clone(), row]).unwrap();
        let (_, w) = a.forward(&store, &xq, &xkv, None, None).unwrap();
        for p in w.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_match_dense_oracle() {
        let (store, a) = attn(5);
        let mut rng = Rng::new(6);
        let xq = random(&mut rng, &[3, 8]);
        let xkv = random(&mut rng, &[5, 8]);
        let bias = random(&mut rng, &[2, 3, 5]);
        let mask = key_padding_mask(3, &[true, true, false, true, true]);
        let (_, w) = a.forward(&store, &xq, &xkv, Some(&bias), Some(&mask)).unwrap();

        let proj = |x: &Tensor, id: ParamId| -> Vec<f64> {
            let (n, d) = (x.shape()[0], 8);
            let wm = store.get(id).data();
            let mut out = vec![0.0; n * d];
            for i in 0..n {
                for j in 0..d {
                    for k in 0..d {
                        out[i * d + j] += x.data()[i * d + k] * wm[k * d + j];
                    }
                }
            }
            out
        };
        let q = proj(&xq, a.q);
        let k = proj(&xkv, a.k);
        for h in 0..2 {
            for i in 0..3 {
                let mut s = [0.0; 5];
                for j in 0..5 {
                    let mut dot = 0.0;
                    for c in 0..4 {
                        dot += q[i * 8 + h * 4 + c] * k[j * 8 + h * 4 + c];
                    }
                    s[j] = dot / 2.0 + bias.data()[(h * 3 + i) * 5 + j] + mask.data()[i * 5 + j];
                }
                let z: f64 = s.iter().map(|v| v.exp()).sum();
                for j in 0..5 {
                    let want = s[j].exp() / z;
                    assert!((w.data()[(h * 3 + i) * 5 + j] - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        assert!(AttentionSpec::new(10, 3, 32, 128).is_err());
        let (store, a) = attn(7);
        let bad = Tensor::zeros(&[2, 6]);
        assert!(matches!(a.forward(&store, &bad, &bad, None, None), Err(Error::Shape(_))));
    }
}
