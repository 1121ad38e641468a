//! Bundled run configurations.

pub const RECIPES: &[(&str, &str)] = &[
    ("duffing.edmd", include_str!("../recipes/duffing.edmd.toml")),
    ("duffing.normal", include_str!("../recipes/duffing.normal.toml")),
    ("duffing.proposed", include_str!("../recipes/duffing.proposed.toml")),
    ("pendulum.edmd", include_str!("../recipes/pendulum.edmd.toml")),
    ("pendulum.normal", include_str!("../recipes/pendulum.normal.toml")),
    ("pendulum.proposed", include_str!("../recipes/pendulum.proposed.toml")),
    ("rtac.edmd", include_str!("../recipes/rtac.edmd.toml")),
    ("rtac.normal", include_str!("../recipes/rtac.normal.toml")),
    ("rtac.proposed", include_str!("../recipes/rtac.proposed.toml")),
    ("sine_map", include_str!("../recipes/sine_map.toml")),
    ("nonnormal_map", include_str!("../recipes/nonnormal_map.toml")),
    ("normal_map", include_str!("../recipes/normal_map.toml")),
];

pub fn recipe(name: &str) -> Option<&'static str> {
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
