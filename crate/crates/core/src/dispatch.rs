//! Command dispatch: maps an invoked command digit to engine effects.
//!
//! Dispatch is a pure decision. The session loop applies the returned state
//! delta and executes the effects.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{EffectKind, Scenario};
use crate::state::{Phase, SessionState, TransitionCause, Turn};

/// Maximum number of images returned for one ShowImages command.
pub const MAX_IMAGES: usize = 3;

pub const FINALIZE_DIRECTIVE: &str =
    "The plan is final. Now confirm the finalized plan with the customer as one utterance.";
pub const PROPOSE_DIRECTIVE: &str =
    "Now propose a concrete travel plan to the customer as one utterance.";
pub const CLARIFY_IMAGES_UTTERANCE: &str =
    "Which sightseeing spot would you like to see pictures of?";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub spot_name: String,
    pub uri: String,
    pub caption: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AssetCatalog {
    assets: Vec<AssetRef>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read asset catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed asset catalog: {0}")]
    Malformed(String),
    #[error("asset {index} ({spot_name}) has an empty uri")]
    EmptyUri { index: usize, spot_name: String },
}

impl AssetCatalog {
    pub fn new(assets: Vec<AssetRef>) -> Result<Self, CatalogError> {
        for (index, a) in assets.iter().enumerate() {
            if a.uri.trim().is_empty() {
                return Err(CatalogError::EmptyUri {
                    index,
                    spot_name: a.spot_name.clone(),
                });
            }
        }
        Ok(Self { assets })
    }

    pub fn parse(json: &str) -> Result<Self, CatalogError> {
        let assets: Vec<AssetRef> =
            serde_json::from_str(json).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        Self::new(assets)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn assets(&self) -> &[AssetRef] {
        &self.assets
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Effect {
    EndDialogue,
    FinalizePlan,
    ShowImages { assets: Vec<AssetRef> },
    ProposePlan,
}

/// What the session loop does right after a command has been executed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FollowUp {
    /// Nothing more this turn (the dialogue is ending).
    None,
    /// Request another dialogue-flow completion, optionally with a directive appended.
    Request { directive: Option<&'static str> },
    /// Speak a fixed clarifying line instead of asking the model again.
    Clarify(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateDelta {
    pub phase: Option<(Phase, TransitionCause)>,
    pub goal_achieved: Option<bool>,
    pub follow_up: FollowUp,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("digit {0} is not in the command table")]
    UnknownCommand(u8),
}

pub fn dispatch_command(
    digit: u8,
    state: &SessionState,
    scenario: &Scenario,
    catalog: &AssetCatalog,
) -> Result<(Vec<Effect>, StateDelta), DispatchError> {
    let spec = scenario
        .command(digit)
        .ok_or(DispatchError::UnknownCommand(digit))?;

    let out = match spec.effect {
        EffectKind::EndDialogue => (
            vec![Effect::EndDialogue],
            StateDelta {
                phase: Some((Phase::Closing, TransitionCause::Command0)),
                goal_achieved: None,
                follow_up: FollowUp::None,
            },
        ),
        EffectKind::FinalizePlan => (
            vec![Effect::FinalizePlan],
            StateDelta {
                phase: None,
                goal_achieved: Some(true),
                follow_up: FollowUp::Request {
                    directive: Some(FINALIZE_DIRECTIVE),
                },
            },
        ),
        EffectKind::ShowImages => {
            let assets = resolve_images(&state.history, catalog);
            let follow_up = if assets.is_empty() {
                FollowUp::Clarify(CLARIFY_IMAGES_UTTERANCE)
            } else {
                FollowUp::Request { directive: None }
            };
            (
                vec![Effect::ShowImages { assets }],
                StateDelta {
                    phase: None,
                    goal_achieved: None,
                    follow_up,
                },
            )
        }
        EffectKind::ProposePlan => (
            vec![Effect::ProposePlan],
            StateDelta {
                phase: None,
                goal_achieved: None,
                follow_up: FollowUp::Request {
                    directive: Some(PROPOSE_DIRECTIVE),
                },
            },
        ),
    };
    Ok(out)
}

/// Catalog assets mentioned in the history (case-insensitive substring),
/// most recently mentioned first, at most [`MAX_IMAGES`].
pub fn resolve_images(history: &[Turn], catalog: &AssetCatalog) -> Vec<AssetRef> {
    let lowered: Vec<String> = history.iter().map(|t| t.text.to_lowercase()).collect();

    let mut hits: Vec<((usize, usize), &AssetRef)> = catalog
        .assets
        .iter()
        .filter_map(|asset| {
            let needle = asset.spot_name.to_lowercase();
            if needle.is_empty() {
                return None;
            }
            lowered
                .iter()
                .enumerate()
                .rev()
                .find_map(|(i, text)| text.rfind(&needle).map(|pos| (i, pos)))
                .map(|at| (at, asset))
        })
        .collect();

    hits.sort_by_key(|h| std::cmp::Reverse(h.0));
    hits.into_iter()
        .take(MAX_IMAGES)
        .map(|(_, a)| a.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CommandSpec, Scenario};

    fn scenario() -> Scenario {
        let mut s = crate::scenario::tests::minimal();
        s.command_table = vec![
            (0, EffectKind::EndDialogue),
            (1, EffectKind::FinalizePlan),
            (2, EffectKind::ShowImages),
            (3, EffectKind::ProposePlan),
        ]
        .into_iter()
        .map(|(digit, effect)| CommandSpec {
            digit,
            description: format!("command {digit}"),
            effect,
        })
        .collect();
        s
    }

    fn asset(name: &str) -> AssetRef {
        AssetRef {
            spot_name: name.into(),
            uri: format!("images/{}.jpg", name.to_lowercase()),
            caption: format!("{name} caption"),
        }
    }

    fn catalog() -> AssetCatalog {
        AssetCatalog::new(
            [
                "Kinkakuji",
                "Kiyomizu",
                "Fushimi Inari",
                "Arashiyama",
                "Gion",
            ]
            .into_iter()
            .map(asset)
            .collect(),
        )
        .unwrap()
    }

    fn history(lines: &[&str]) -> Vec<Turn> {
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| Turn::user(*l, i as u64 * 10, i as u64 * 10 + 5))
            .collect()
    }

    /// Oracle: walk turns newest-first; within a turn, order spots by their
    /// last occurrence from the right. First sighting wins.
    fn last_mention_oracle(history: &[Turn], catalog: &AssetCatalog) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for turn in history.iter().rev() {
            let text = turn.text.to_lowercase();
            let mut in_turn: Vec<(usize, String)> = Vec::new();
            for a in catalog.assets() {
                let name = a.spot_name.to_lowercase();
                let mut last = None;
                let mut start = 0;
                while let Some(p) = text[start..].find(&name) {
                    last = Some(start + p);
                    start += p + 1;
                }
                if let Some(p) = last {
                    in_turn.push((p, a.spot_name.clone()));
                }
            }
            in_turn.sort_by_key(|h| std::cmp::Reverse(h.0));
            for (_, n) in in_turn {
                if !seen.contains(&n) {
                    seen.push(n);
                }
            }
        }
        seen.truncate(MAX_IMAGES);
        seen
    }

    #[test]
    fn direct_match() {
        let h = history(&["I want to see Kinkakuji."]);
        assert_eq!(resolve_images(&h, &catalog()), vec![asset("Kinkakuji")]);
    }

    #[test]
    fn no_mention_is_empty() {
        let h = history(&["Somewhere quiet, please."]);
        assert!(resolve_images(&h, &catalog()).is_empty());
    }

    #[test]
    fn most_recent_mention_first() {
        let mut lines = vec!["hello"; 8];
        lines[3] = "What about kiyomizu temple?";
        lines[7] = "KINKAKUJI looks nice";
        let h = history(&lines);
        let names: Vec<_> = resolve_images(&h, &catalog())
            .into_iter()
            .map(|a| a.spot_name)
            .collect();
        assert_eq!(names, vec!["Kinkakuji", "Kiyomizu"]);
        assert_eq!(names, last_mention_oracle(&h, &catalog()));
    }

    #[test]
    fn capped_and_matches_oracle() {
        let h = history(&[
            "Gion at night and Arashiyama",
            "Fushimi Inari, then Kiyomizu",
            "Kinkakuji, or back to Gion?",
        ]);
        let got: Vec<_> = resolve_images(&h, &catalog())
            .into_iter()
            .map(|a| a.spot_name)
            .collect();
        assert_eq!(got.len(), MAX_IMAGES);
        assert_eq!(got, last_mention_oracle(&h, &catalog()));
        assert_eq!(got, vec!["Gion", "Kinkakuji", "Kiyomizu"]);
    }

    #[test]
    fn end_dialogue_moves_to_closing() {
        let state = SessionState::new(1000);
        let (effects, delta) = dispatch_command(0, &state, &scenario(), &catalog()).unwrap();
        assert_eq!(effects, vec![Effect::EndDialogue]);
        assert_eq!(
            delta.phase,
            Some((Phase::Closing, TransitionCause::Command0))
        );
        assert_eq!(delta.follow_up, FollowUp::None);
    }

    #[test]
    fn finalize_sets_goal_and_requests_confirmation() {
        let state = SessionState::new(1000);
        let (effects, delta) = dispatch_command(1, &state, &scenario(), &catalog()).unwrap();
        assert_eq!(effects, vec![Effect::FinalizePlan]);
        assert_eq!(delta.goal_achieved, Some(true));
        assert_eq!(
            delta.follow_up,
            FollowUp::Request {
                directive: Some(FINALIZE_DIRECTIVE)
            }
        );
    }

    #[test]
    fn show_images_resolves_from_history() {
        let mut state = SessionState::new(1000);
        state.history = history(&["Can I see pictures of Kinkakuji?"]);
        let (effects, delta) = dispatch_command(2, &state, &scenario(), &catalog()).unwrap();
        assert_eq!(
            effects,
            vec![Effect::ShowImages {
                assets: vec![asset("Kinkakuji")]
            }]
        );
        assert_eq!(delta.follow_up, FollowUp::Request { directive: None });
    }

    #[test]
    fn show_images_without_mention_clarifies() {
        let state = SessionState::new(1000);
        let (effects, delta) = dispatch_command(2, &state, &scenario(), &catalog()).unwrap();
        assert_eq!(effects, vec![Effect::ShowImages { assets: vec![] }]);
        assert_eq!(delta.follow_up, FollowUp::Clarify(CLARIFY_IMAGES_UTTERANCE));
    }

    #[test]
    fn propose_requests_plan() {
        let state = SessionState::new(1000);
        let (_, delta) = dispatch_command(3, &state, &scenario(), &catalog()).unwrap();
        assert_eq!(
            delta.follow_up,
            FollowUp::Request {
                directive: Some(PROPOSE_DIRECTIVE)
            }
        );
    }

    #[test]
    fn unknown_digit() {
        let state = SessionState::new(1000);
        assert_eq!(
            dispatch_command(7, &state, &scenario(), &catalog()).unwrap_err(),
            DispatchError::UnknownCommand(7)
        );
    }

    #[test]
    fn dispatch_is_total_and_only_end_changes_phase() {
        let state = SessionState::new(1000);
        let s = scenario();
        for cmd in &s.command_table {
            let (effects, delta) = dispatch_command(cmd.digit, &state, &s, &catalog()).unwrap();
            assert_eq!(effects.len(), 1);
            assert_eq!(delta.phase.is_some(), cmd.effect == EffectKind::EndDialogue);
        }
    }

    #[test]
    fn catalog_rejects_empty_uri() {
        let err = AssetCatalog::parse(r#"[{"spot_name":"X","uri":"","caption":""}]"#).unwrap_err();
        assert!(matches!(err, CatalogError::EmptyUri { index: 0, .. }));
    }
}
