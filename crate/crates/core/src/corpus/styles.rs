//! Style corpora verbalizing scenes: short captions and longer stories.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::world::{Scene, TemplateFamily, World};
use crate::error::{Error, Result};
use crate::rng::substream;

pub const STYLES: &[&str] = &["caption", "story"];
pub const DEFAULT_TEMPLATE_SET: &str = "default";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyledDocument {
    pub style_tag: String,
    /// Whitespace-separated words.
    pub body: String,
}

impl StyledDocument {
    /// Text as fed to the language model: `"tag: body"`.
    pub fn prompted_text(&self) -> String {
        format!("{} {}", style_prompt(&self.style_tag), self.body)
    }
}

/// Surface form of a style prompt.
pub fn style_prompt(tag: &str) -> String {
    format!("{tag}:")
}

const NAMES: &[&str] = &[
    "anna", "ben", "clara", "david", "emma", "felix", "grace", "henry", "iris", "jack", "kate",
    "leo", "maya", "noah", "olga", "paul", "rosa", "sam", "tina", "victor", "wendy", "yuri", "zoe",
    "omar",
];
const PLACES: &[&str] = &[
    "forest", "garden", "city", "village", "castle", "river", "mountain", "desert", "harbor",
    "school", "library", "market", "meadow", "island", "valley", "kitchen", "museum", "park",
    "station", "cave", "farm", "bridge", "tower", "lake",
];
const VERBS: &[&str] = &[
    "dance", "sing", "play", "run", "read", "paint", "swim", "jump", "talk", "laugh", "travel",
    "cook", "explore", "dream", "climb", "rest", "write", "listen", "wander", "build", "sail",
    "fly", "hide", "search",
];
const FEELINGS: &[&str] = &[
    "happy", "tired", "curious", "proud", "brave", "quiet", "lucky", "glad", "busy", "sleepy",
    "kind", "clever", "shy", "bold", "wise", "silly", "warm", "hungry", "lonely", "excited",
];

fn caption_templates(family: TemplateFamily) -> &'static [&'static str] {
    match family {
        TemplateFamily::Shapes => &[
            "a {d}",
            "there is a {d}",
            "a picture of a {d}",
            "an image showing a {d}",
        ],
        TemplateFamily::Tones => &[
            "a {d}",
            "the sound of a {d}",
            "a recording of a {d}",
            "you can hear a {d}",
        ],
    }
}

fn story_templates(family: TemplateFamily) -> &'static [&'static str] {
    match family {
        TemplateFamily::Shapes => &[
            "once upon a time there was a {d} . the {d} lived in the {place} with {name} and was very {feel} .",
            "{name} found a {d} near the {place} . every day {name} and the {d} would {verb} together .",
            "in the {place} there was a {d} who loved to {verb} . one day the {d} met {name} and felt {feel} .",
        ],
        TemplateFamily::Tones => &[
            "once upon a time {name} played a {d} in the {place} . the {d} made everyone {feel} .",
            "every night in the {place} a {d} could be heard . {name} would {verb} to the {d} until morning .",
            "{name} heard a {d} from the {place} and began to {verb} . the {d} was so {feel} that {name} smiled .",
        ],
    }
}

fn templates(world: &World, style: &str, template_set: &str) -> Result<&'static [&'static str]> {
    if template_set != DEFAULT_TEMPLATE_SET {
        return Err(Error::InvalidArgument(format!(
            "unknown template set `{template_set}`"
        )));
    }
    match style {
        "caption" => Ok(caption_templates(world.family)),
        "story" => Ok(story_templates(world.family)),
        other => Err(Error::UnknownStyle(other.to_string())),
    }
}

fn fill<R: Rng>(template: &str, description: &str, rng: &mut R) -> String {
    let name = NAMES.choose(rng).unwrap();
    let place = PLACES.choose(rng).unwrap();
    let verb = VERBS.choose(rng).unwrap();
    let feel = FEELINGS.choose(rng).unwrap();
    template
        .replace("{d}", description)
        .replace("{name}", name)
        .replace("{place}", place)
        .replace("{verb}", verb)
        .replace("{feel}", feel)
}

impl World {
    /// One document per scene in the given style.
    pub fn style_corpus(
        &self,
        style: &str,
        scenes: &[Scene],
        template_set: &str,
        seed: u64,
    ) -> Result<Vec<StyledDocument>> {
        let templates = templates(self, style, template_set)?;
        let mut rng = substream(seed, "style_corpus", &[]);
        scenes
            .iter()
            .map(|scene| {
                self.validate_scene(scene)?;
                let t = templates.choose(&mut rng).unwrap();
                Ok(StyledDocument {
                    style_tag: style.to_string(),
                    body: fill(t, &self.describe(scene), &mut rng),
                })
            })
            .collect()
    }

    /// Every caption template realized for `scene`; used as metric references.
    pub fn reference_captions(&self, scene: &Scene) -> Vec<String> {
        let d = self.describe(scene);
        caption_templates(self.family)
            .iter()
            .map(|t| t.replace("{d}", &d))
            .collect()
    }
}

pub fn generate_style_corpus(
    world: &World,
    style_tag: &str,
    scenes: &[Scene],
    template_set: &str,
    seed: u64,
) -> Result<Vec<StyledDocument>> {
    world.style_corpus(style_tag, scenes, template_set, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(attrs: &[&str]) -> Scene {
        Scene {
            scene_id: 0,
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn caption_and_story_mention_attributes() {
        let w = World::shapeworld();
        let s = [scene(&["red", "circle"])];
        let cap = w.style_corpus("caption", &s, "default", 0).unwrap();
        let words: Vec<&str> = cap[0].body.split_whitespace().collect();
        assert!(words.contains(&"red") && words.contains(&"circle"));
        let story = w.style_corpus("story", &s, "default", 0).unwrap();
        assert!(story[0].body.split_whitespace().count() > words.len());
        assert!(story[0].body.contains("red circle"));
    }

    #[test]
    fn unknown_style_or_template_set_is_an_error() {
        let w = World::shapeworld();
        let s = [scene(&["red"])];
        assert!(matches!(
            w.style_corpus("poem", &s, "default", 0),
            Err(Error::UnknownStyle(_))
        ));
        assert!(w.style_corpus("caption", &s, "other", 0).is_err());
    }

    #[test]
    fn at_least_three_templates_per_style() {
        for w in [World::shapeworld(), World::toneworld()] {
            for style in STYLES {
                assert!(templates(&w, style, "default").unwrap().len() >= 3);
            }
        }
    }

    #[test]
    fn captions_are_shorter_than_stories_on_average() {
        for w in [World::shapeworld(), World::toneworld()] {
            let scenes = w.generate_scenes(500, 3, 0).unwrap();
            let mean = |docs: Vec<StyledDocument>| {
                docs.iter()
                    .map(|d| d.body.split_whitespace().count())
                    .sum::<usize>() as f64
                    / docs.len() as f64
            };
            let c = mean(w.style_corpus("caption", &scenes, "default", 1).unwrap());
            let s = mean(w.style_corpus("story", &scenes, "default", 1).unwrap());
            assert!(c < s, "{c} vs {s}");
        }
    }

    #[test]
    fn every_document_mentions_every_attribute() {
        for w in [World::shapeworld(), World::toneworld()] {
            let scenes = w.generate_scenes(200, 9, 0).unwrap();
            for style in STYLES {
                let docs = w.style_corpus(style, &scenes, "default", 2).unwrap();
                for (d, s) in docs.iter().zip(&scenes) {
                    let words: Vec<&str> = d.body.split_whitespace().collect();
                    for a in &s.attributes {
                        assert!(words.contains(&a.as_str()), "{a} missing from {}", d.body);
                    }
                }
            }
        }
    }
}
