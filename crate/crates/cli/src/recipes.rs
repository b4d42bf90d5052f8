//! Bundled experiment configs.

pub const TRAJECTORY2D: &str = include_str!("../recipes/trajectory2d.json");
pub const BENCHMARK100: &str = include_str!("../recipes/benchmark100.json");
pub const BENCHMARK10: &str = include_str!("../recipes/benchmark10.json");
pub const SHIFTED10: &str = include_str!("../recipes/shifted10.json");

pub const NAMES: [&str; 4] = ["trajectory2d", "benchmark100", "benchmark10", "shifted10"];

pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "trajectory2d" => Some(TRAJECTORY2D),
        "benchmark100" => Some(BENCHMARK100),
        "benchmark10" => Some(BENCHMARK10),
        "shifted10" => Some(SHIFTED10),
        _ => None,
    }
}
