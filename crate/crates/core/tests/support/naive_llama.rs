//! Brute-force Llama decoder written from the formulas: explicit matrices,
//! f64 sums, full recomputation for every position.
#![allow(dead_code)]

use vien_core::gguf::{dequantize_tensor, GgufFile};

pub struct Naive {
    e: usize,
    heads: usize,
    kv_heads: usize,
    theta: f64,
    eps: f64,
    embd: Vec<Vec<f64>>,
    layers: Vec<NaiveLayer>,
    out_norm: Vec<f64>,
    out: Vec<Vec<f64>>,
}

struct NaiveLayer {
    attn_norm: Vec<f64>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
    ffn_norm: Vec<f64>,
    gate: Vec<Vec<f64>>,
    up: Vec<Vec<f64>>,
    down: Vec<Vec<f64>>,
}

/// Rows of a tensor. F32 payloads are decoded straight from the bytes; other
/// types go through the (separately verified) dequantizer.
fn matrix(file: &GgufFile, name: &str) -> Vec<Vec<f64>> {
    let view = file.tensor_view(name).unwrap();
    let cols = view.dims[0] as usize;
    let flat: Vec<f32> = if view.ggml_type.0 == 0 {
        view.data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect()
    } else {
        dequantize_tensor(&view).unwrap()
    };
    flat.chunks(cols).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn vector(file: &GgufFile, name: &str) -> Vec<f64> {
    matrix(file, name).concat()
}

impl Naive {
    pub fn new(file: &GgufFile) -> Self {
        let u = |k: &str| file.get_uint(k).unwrap() as usize;
        let n_layers = u("llama.block_count");
        let layers = (0..n_layers)
            .map(|i| {
                let m = |s: &str| matrix(file, &format!("blk.{i}.{s}.weight"));
                NaiveLayer {
                    attn_norm: vector(file, &format!("blk.{i}.attn_norm.weight")),
                    q: m("attn_q"),
                    k: m("attn_k"),
                    v: m("attn_v"),
                    o: m("attn_output"),
                    ffn_norm: vector(file, &format!("blk.{i}.ffn_norm.weight")),
                    gate: m("ffn_gate"),
                    up: m("ffn_up"),
                    down: m("ffn_down"),
                }
            })
            .collect();
        let out = if file.has_tensor("output.weight") {
            matrix(file, "output.weight")
        } else {
            matrix(file, "token_embd.weight")
        };
        Naive {
            e: u("llama.embedding_length"),
            heads: u("llama.attention.head_count"),
            kv_heads: u("llama.attention.head_count_kv"),
            theta: file.get_float("llama.rope.freq_base").unwrap_or(10000.0),
            eps: file.get_float("llama.attention.layer_norm_rms_epsilon").unwrap_or(1e-5),
            embd: matrix(file, "token_embd.weight"),
            layers,
            out_norm: vector(file, "output_norm.weight"),
            out,
        }
    }

    fn mul(w: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        w.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn norm(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        x.iter().zip(w).map(|(v, w)| v / (ms + self.eps).sqrt() * w).collect()
    }

    fn rope(&self, v: &mut [f64], pos: usize) {
        let d = v.len();
        for j in 0..d / 2 {
            let angle = pos as f64 * self.theta.powf(-(2.0 * j as f64) / d as f64);
            let (x, y) = (v[2 * j], v[2 * j + 1]);
            v[2 * j] = x * angle.cos() - y * angle.sin();
            v[2 * j + 1] = x * angle.sin() + y * angle.cos();
        }
    }

    /// Logits of every position, recomputed from scratch.
    pub fn logits(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        let hd = self.e / self.heads;
        let mut xs: Vec<Vec<f64>> = tokens.iter().map(|&t| self.embd[t as usize].clone()).collect();
        for l in &self.layers {
            let hs: Vec<Vec<f64>> = xs.iter().map(|x| self.norm(x, &l.attn_norm)).collect();
            let mut qs: Vec<Vec<f64>> = hs.iter().map(|h| Self::mul(&l.q, h)).collect();
            let mut ks: Vec<Vec<f64>> = hs.iter().map(|h| Self::mul(&l.k, h)).collect();
            let vs: Vec<Vec<f64>> = hs.iter().map(|h| Self::mul(&l.v, h)).collect();
            for (p, (q, k)) in qs.iter_mut().zip(ks.iter_mut()).enumerate() {
                for c in q.chunks_mut(hd) {
                    self.rope(c, p);
                }
                for c in k.chunks_mut(hd) {
                    self.rope(c, p);
                }
            }
            for t in 0..tokens.len() {
                let mut att = vec![0.0; self.e];
                for h in 0..self.heads {
                    let kh = h * self.kv_heads / self.heads;
                    let q = &qs[t][h * hd..(h + 1) * hd];
                    let scores: Vec<f64> = (0..=t)
                        .map(|p| {
                            let k = &ks[p][kh * hd..(kh + 1) * hd];
                            q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt()
                        })
                        .collect();
                    let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                    for (p, s) in scores.iter().enumerate() {
                        let w = (s - m).exp() / z;
                        for i in 0..hd {
                            att[h * hd + i] += w * vs[p][kh * hd + i];
                        }
                    }
                }
                let o = Self::mul(&l.o, &att);
                for (x, d) in xs[t].iter_mut().zip(o) {
                    *x += d;
                }
            }
            for x in xs.iter_mut() {
                let h = self.norm(x, &l.ffn_norm);
                let g = Self::mul(&l.gate, &h);
                let u = Self::mul(&l.up, &h);
                let a: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
                for (x, d) in x.iter_mut().zip(Self::mul(&l.down, &a)) {
                    *x += d;
                }
            }
        }
        xs.iter().map(|x| Self::mul(&self.out, &self.norm(x, &self.out_norm))).collect()
    }
}

