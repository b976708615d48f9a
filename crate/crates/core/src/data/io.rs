//! Scene files: UTF-8, one JSON-encoded [`Scene`] per line.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::scene::Scene;
use crate::error::{Error, Result};

/// Serialises scenes, one per line. Floats use the shortest
/// representation that round-trips exactly.
pub fn scenes_to_string(scenes: &[Scene]) -> String {
    let mut out = String::new();
    for s in scenes {
        out.push_str(&serde_json::to_string(s).expect("scene serialises"));
        out.push('\n');
    }
    out
}

pub fn save_scenes(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(scenes_to_string(scenes).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Parses scene lines and checks every label lies in `[0, num_predicates)`.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_scenes(text: &str, num_predicates: usize) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        scene
            .validate(num_predicates, None, None)
            .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn load_scenes(path: impl AsRef<Path>, num_predicates: usize) -> Result<Vec<Scene>> {
    parse_scenes(&fs::read_to_string(path)?, num_predicates)
}
