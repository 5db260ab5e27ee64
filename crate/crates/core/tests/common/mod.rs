#![allow(dead_code)]

use metactl_core::dispatch::AssetCatalog;
use metactl_core::llm::{parse_script, ScriptEntry};
use metactl_core::replay::{load_user_script, ReplayConfig, UserScriptEntry};
use metactl_core::scenario::{load_scenario, Scenario};
use metactl_core::session::EngineSettings;

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn kyoto() -> Scenario {
    load_scenario(format!("{FIXTURES}/kyoto-travel.json")).unwrap()
}

pub fn assets() -> AssetCatalog {
    AssetCatalog::load(format!("{FIXTURES}/assets.json")).unwrap()
}

pub fn llm_script(name: &str) -> Vec<ScriptEntry> {
    parse_script(&std::fs::read_to_string(format!("{FIXTURES}/replay/{name}")).unwrap()).unwrap()
}

pub fn user_script(name: &str) -> Vec<UserScriptEntry> {
    load_user_script(format!("{FIXTURES}/replay/{name}")).unwrap()
}

pub fn config(llm: &str, user: &str) -> ReplayConfig {
    ReplayConfig {
        scenario: kyoto(),
        catalog: assets(),
        settings: EngineSettings::default(),
        llm_script: llm_script(llm),
        user_script: user_script(user),
        max_ticks: None,
    }
}
