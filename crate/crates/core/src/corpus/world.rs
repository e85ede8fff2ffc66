//! Synthetic attribute worlds: scenes are small sets of attribute symbols.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    /// Attribute symbols, sorted in alphabet order.
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Rendered before the head noun ("small", "red").
    Modifier,
    /// Rendered as the noun ("circle"); several are joined with "and".
    Head,
}

#[derive(Debug, Clone)]
pub struct Category {
    pub name: &'static str,
    pub role: Role,
    pub values: &'static [&'static str],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TemplateFamily {
    Shapes,
    Tones,
}

#[derive(Debug, Clone)]
pub struct World {
    pub name: &'static str,
    pub categories: Vec<Category>,
    /// Noun used when a scene has no head attribute.
    pub default_head: &'static str,
    pub(crate) family: TemplateFamily,
}

pub const WORLD_NAMES: &[&str] = &["shapeworld", "toneworld"];

impl World {
    /// 3 sizes, 8 colors and 6 shapes.
    pub fn shapeworld() -> Self {
        World {
            name: "shapeworld",
            categories: vec![
                Category {
                    name: "size",
                    role: Role::Modifier,
                    values: &["small", "medium", "large"],
                },
                Category {
                    name: "color",
                    role: Role::Modifier,
                    values: &[
                        "red", "green", "blue", "yellow", "purple", "orange", "white", "black",
                    ],
                },
                Category {
                    name: "shape",
                    role: Role::Head,
                    values: &["circle", "square", "triangle", "star", "hexagon", "cross"],
                },
            ],
            default_head: "shape",
            family: TemplateFamily::Shapes,
        }
    }

    /// 3 tempos, 5 moods and 6 instruments.
    pub fn toneworld() -> Self {
        World {
            name: "toneworld",
            categories: vec![
                Category {
                    name: "tempo",
                    role: Role::Modifier,
                    values: &["slow", "steady", "fast"],
                },
                Category {
                    name: "mood",
                    role: Role::Modifier,
                    values: &["calm", "bright", "dark", "gentle", "loud"],
                },
                Category {
                    name: "instrument",
                    role: Role::Head,
                    values: &["piano", "guitar", "drum", "violin", "flute", "trumpet"],
                },
            ],
            default_head: "melody",
            family: TemplateFamily::Tones,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "shapeworld" => Ok(Self::shapeworld()),
            "toneworld" => Ok(Self::toneworld()),
            other => Err(Error::UnknownWorld(other.to_string())),
        }
    }

    /// All attribute symbols, category by category.
    pub fn alphabet(&self) -> Vec<&'static str> {
        self.categories
            .iter()
            .flat_map(|c| c.values.iter().copied())
            .collect()
    }

    fn role_of(&self, attr: &str) -> Option<Role> {
        self.categories
            .iter()
            .find(|c| c.values.contains(&attr))
            .map(|c| c.role)
    }

    pub fn validate_scene(&self, scene: &Scene) -> Result<()> {
        if scene.attributes.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "scene {} has no attributes",
                scene.scene_id
            )));
        }
        for a in &scene.attributes {
            if self.role_of(a).is_none() {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{a}` of scene {} is not in the {} alphabet",
                    scene.scene_id, self.name
                )));
            }
        }
        Ok(())
    }

    /// `n_scenes` scenes with ids `first_id..`, each holding 1 to 3
    /// attributes drawn uniformly without replacement from the alphabet.
    pub fn generate_scenes(&self, n_scenes: usize, seed: u64, first_id: u64) -> Result<Vec<Scene>> {
        if n_scenes == 0 {
            return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
        }
        let alphabet = self.alphabet();
        let mut rng = substream(seed, "scenes", &[]);
        Ok((0..n_scenes)
            .map(|i| {
                let m = rng.gen_range(1..=3);
                let mut picked = sample(&mut rng, alphabet.len(), m).into_vec();
                picked.sort_unstable();
                Scene {
                    scene_id: first_id + i as u64,
                    attributes: picked
                        .into_iter()
                        .map(|j| alphabet[j].to_string())
                        .collect(),
                }
            })
            .collect())
    }

    /// Noun phrase naming every attribute of the scene, e.g.
    /// "small red circle" or "blue square and star".
    pub fn describe(&self, scene: &Scene) -> String {
        let mut mods = Vec::new();
        let mut heads = Vec::new();
        for a in &scene.attributes {
            match self.role_of(a) {
                Some(Role::Modifier) => mods.push(a.as_str()),
                Some(Role::Head) => heads.push(a.as_str()),
                None => {}
            }
        }
        let head = if heads.is_empty() {
            self.default_head.to_string()
        } else {
            heads.join(" and ")
        };
        if mods.is_empty() {
            head
        } else {
            format!("{} {head}", mods.join(" "))
        }
    }
}

/// Scenes of the standard 17-symbol ShapeWorld alphabet.
pub fn generate_shapeworld(n_scenes: usize, seed: u64) -> Result<Vec<Scene>> {
    World::shapeworld().generate_scenes(n_scenes, seed, 0)
}
