//! Frozen dual encoders and the alignment signal they provide.
//!
//! [`AttributeEncoder`] is an analytically tractable stand-in for a
//! contrastive image/text or audio/text encoder: every attribute symbol of a
//! world owns a fixed random unit vector, a scene embeds as the normalized
//! sum of its attribute vectors, and a text embeds as the normalized sum over
//! the distinct attribute words it mentions. Texts mentioning no attribute map
//! to a reserved "null" axis that no attribute vector touches.

use std::collections::HashMap;

use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{FeatureMap, ModalityFeature, Scene, TokenId, Vocabulary, World};
use crate::error::{Error, Result};
use crate::rng::substream;

/// `a·b / (‖a‖‖b‖)`, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Text side of a frozen dual encoder.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode_text(&self, text: &str) -> ModalityFeature;
}

/// The scoring contract used during RL: given generated texts and the ids of
/// the inputs they describe, return one cosine similarity per pair. Must be
/// pure and stateless.
pub trait Scorer: Send + Sync {
    fn score(&self, texts: &[String], input_ids: &[u64]) -> Result<Vec<f64>>;
}

/// Scores texts against cached input features with a [`TextEncoder`].
pub struct FeatureScorer<E> {
    pub encoder: E,
    pub features: FeatureMap,
}

impl<E: TextEncoder> Scorer for FeatureScorer<E> {
    fn score(&self, texts: &[String], input_ids: &[u64]) -> Result<Vec<f64>> {
        if texts.len() != input_ids.len() {
            return Err(Error::LengthMismatch {
                left: texts.len(),
                right: input_ids.len(),
            });
        }
        texts
            .iter()
            .zip(input_ids)
            .map(|(t, &id)| cosine(&self.features.get(id)?.0, &self.encoder.encode_text(t).0))
            .collect()
    }
}

/// Adapts a user-supplied batched callback (e.g. an external CLIP text tower
/// paired with cached image features) to [`Scorer`].
pub struct CallbackScorer<F>(pub F);

impl<F> Scorer for CallbackScorer<F>
where
    F: Fn(&[String], &[u64]) -> Result<Vec<f64>> + Send + Sync,
{
    fn score(&self, texts: &[String], input_ids: &[u64]) -> Result<Vec<f64>> {
        let out = (self.0)(texts, input_ids)?;
        if out.len() != texts.len() {
            return Err(Error::Scorer(format!(
                "callback returned {} scores for {} texts",
                out.len(),
                texts.len()
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct AttributeEncoder {
    world: &'static str,
    attributes: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl AttributeEncoder {
    /// Attribute vectors are seeded isotropic Gaussians in the first `dim - 1`
    /// coordinates, normalized; the last coordinate is the null axis.
    pub fn new(world: &World, dim: usize, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidArgument(
                "encoder dim must be at least 2".into(),
            ));
        }
        let attributes: Vec<String> = world.alphabet().iter().map(|s| s.to_string()).collect();
        let mut rng = substream(seed, "attribute_vectors", &[]);
        let vectors = attributes
            .iter()
            .map(|_| {
                let mut v: Vec<f64> = (0..dim - 1)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
                v.push(0.0);
                v
            })
            .collect();
        let index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Ok(Self {
            world: world.name,
            attributes,
            vectors,
            index,
            dim,
        })
    }

    /// Build from explicit attribute vectors (e.g. an orthonormal basis in
    /// tests). Vectors must be unit-norm, `dim - 1` long, the null axis is
    /// appended.
    pub fn from_vectors(attributes: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len() + 1).unwrap_or(2);
        if vectors.len() != attributes.len() || vectors.iter().any(|v| v.len() + 1 != dim) {
            return Err(Error::InvalidArgument(
                "attribute vectors must share one dimension".into(),
            ));
        }
        let vectors = vectors
            .into_iter()
            .map(|mut v| {
                v.push(0.0);
                v
            })
            .collect();
        let index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Ok(Self {
            world: "custom",
            attributes,
            vectors,
            index,
            dim,
        })
    }

    pub fn world_name(&self) -> &str {
        self.world
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn attribute_vector(&self, attr: &str) -> Option<&[f64]> {
        self.index.get(attr).map(|&i| self.vectors[i].as_slice())
    }

    fn embed_indices(&self, idx: &[usize]) -> ModalityFeature {
        if idx.is_empty() {
            let mut v = vec![0.0f32; self.dim];
            v[self.dim - 1] = 1.0;
            return ModalityFeature(v);
        }
        let mut s = vec![0.0f64; self.dim];
        for &i in idx {
            for (a, b) in s.iter_mut().zip(&self.vectors[i]) {
                *a += b;
            }
        }
        let n = s.iter().map(|x| x * x).sum::<f64>().sqrt();
        ModalityFeature(s.iter().map(|x| (x / n) as f32).collect())
    }

    fn distinct_indices<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        let mut idx: Vec<usize> = words
            .into_iter()
            .filter_map(|w| self.index.get(w).copied())
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }

    /// Normalized sum of the scene's attribute vectors.
    pub fn encode_scene(&self, scene: &Scene) -> Result<ModalityFeature> {
        let mut idx = Vec::with_capacity(scene.attributes.len());
        for a in &scene.attributes {
            idx.push(*self.index.get(a).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "attribute `{a}` unknown to the {} encoder",
                    self.world
                ))
            })?);
        }
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "scene {} has no attributes",
                scene.scene_id
            )));
        }
        Ok(self.embed_indices(&idx))
    }

    pub fn encode_words<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> ModalityFeature {
        self.embed_indices(&self.distinct_indices(words))
    }

    pub fn encode_tokens(&self, tokens: &[TokenId], vocab: &Vocabulary) -> ModalityFeature {
        self.encode_words(
            tokens
                .iter()
                .filter(|&&t| (t as usize) < vocab.len())
                .map(|&t| vocab.surface(t)),
        )
    }

    /// Exhaustive search over attribute-word bags of size at most `max_words`
    /// for the highest cosine with the scene. Returns the value and the
    /// witness text (words in alphabet order).
    pub fn best_achievable_reward(&self, scene: &Scene, max_words: usize) -> Result<(f64, String)> {
        let target = self.encode_scene(scene)?;
        let n = self.attributes.len();
        let mut best = (
            cosine(&target.0, &self.embed_indices(&[]).0)?,
            String::new(),
        );
        let mut combo: Vec<usize> = Vec::new();
        fn recurse(
            enc: &AttributeEncoder,
            target: &ModalityFeature,
            start: usize,
            n: usize,
            max_words: usize,
            combo: &mut Vec<usize>,
            best: &mut (f64, String),
        ) -> Result<()> {
            for i in start..n {
                combo.push(i);
                let c = cosine(&target.0, &enc.embed_indices(combo).0)?;
                if c > best.0 {
                    let words: Vec<&str> =
                        combo.iter().map(|&j| enc.attributes[j].as_str()).collect();
                    *best = (c, words.join(" "));
                }
                if combo.len() < max_words {
                    recurse(enc, target, i + 1, n, max_words, combo, best)?;
                }
                combo.pop();
            }
            Ok(())
        }
        if max_words > 0 {
            recurse(self, &target, 0, n, max_words, &mut combo, &mut best)?;
        }
        Ok(best)
    }
}

impl TextEncoder for AttributeEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_text(&self, text: &str) -> ModalityFeature {
        self.encode_words(text.split_whitespace())
    }
}

/// Embed every scene into a feature map (the "pre-extraction" step).
pub fn extract_features(encoder: &AttributeEncoder, scenes: &[Scene]) -> Result<FeatureMap> {
    FeatureMap::from_records(
        scenes
            .iter()
            .map(|s| Ok((s.scene_id, encoder.encode_scene(s)?)))
            .collect::<Result<Vec<_>>>()?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(names: &[&str]) -> AttributeEncoder {
        let n = names.len();
        let vectors = (0..n)
            .map(|i| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            })
            .collect();
        AttributeEncoder::from_vectors(names.iter().map(|s| s.to_string()).collect(), vectors)
            .unwrap()
    }

    fn scene(attrs: &[&str]) -> Scene {
        Scene {
            scene_id: 1,
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn cosine_basics() {
        let v = [0.3f32, -1.2, 2.0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn scene_and_text_encoding() {
        let enc = orthonormal(&["red", "circle", "small"]);
        let single = enc.encode_scene(&scene(&["red"])).unwrap();
        assert_eq!(single.0, vec![1.0, 0.0, 0.0, 0.0]);
        let pair = enc.encode_scene(&scene(&["red", "circle"])).unwrap();
        let r = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(pair.0, vec![r, r, 0.0, 0.0]);

        let text = enc.encode_text("a red circle");
        assert!((cosine(&pair.0, &text.0).unwrap() - 1.0).abs() < 1e-7);
        let text = enc.encode_text("red red red");
        assert!((cosine(&pair.0, &text.0).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-7);
        let null = enc.encode_text("nothing here");
        assert_eq!(cosine(&pair.0, &null.0).unwrap(), 0.0);
    }

    #[test]
    fn world_encoder_vectors_are_unit_and_deterministic() {
        let w = World::shapeworld();
        let a = AttributeEncoder::new(&w, 64, 4).unwrap();
        let b = AttributeEncoder::new(&w, 64, 4).unwrap();
        for attr in a.attributes() {
            let v = a.attribute_vector(attr).unwrap();
            assert!((v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(v[63], 0.0);
            assert_eq!(v, b.attribute_vector(attr).unwrap());
        }
        let s = scene(&["red", "circle"]);
        assert_eq!(a.encode_scene(&s).unwrap(), a.encode_scene(&s).unwrap());
        assert!(a.encode_scene(&scene(&["mauve"])).is_err());
    }

    #[test]
    fn best_achievable() {
        let enc = orthonormal(&["red", "circle", "small", "blue"]);
        let (v, w) = enc.best_achievable_reward(&scene(&["red"]), 3).unwrap();
        assert!((v - 1.0).abs() < 1e-7);
        assert_eq!(w, "red");
        let (v, w) = enc
            .best_achievable_reward(&scene(&["red", "circle"]), 3)
            .unwrap();
        assert!((v - 1.0).abs() < 1e-7);
        assert_eq!(w, "red circle");
        // Three orthonormal attributes, two words: cosine of a 2-subset with
        // the 3-sum is 2 / (sqrt 2 · sqrt 3) = sqrt(2/3).
        let (v, w) = enc
            .best_achievable_reward(&scene(&["red", "circle", "small"]), 2)
            .unwrap();
        assert!((v - (2.0f64 / 3.0).sqrt()).abs() < 1e-7);
        assert_eq!(w.split_whitespace().count(), 2);
    }

    #[test]
    fn callback_scorer_checks_batch_size() {
        let s = CallbackScorer(|texts: &[String], _: &[u64]| Ok(vec![0.5; texts.len() + 1]));
        assert!(s.score(&["a".into()], &[0]).is_err());
        let s = CallbackScorer(|texts: &[String], _: &[u64]| Ok(vec![0.5; texts.len()]));
        assert_eq!(s.score(&["a".into()], &[0]).unwrap(), vec![0.5]);
    }
}
