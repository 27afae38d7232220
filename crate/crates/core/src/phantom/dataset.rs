use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Landmark, PhantomCase, PhantomConfig, PhantomError, Result};
use crate::geometry::{read_plane_line, read_volume, write_plane_line, write_volume, Plane};

pub const CASE_DIR_PREFIX: &str = "case_";

/// Write one case as a sub-directory: volume file, `planes.txt`,
/// `landmarks.txt`, `landmarks_observed.txt` and `meta.txt`.
pub fn write_case(dir: &Path, case: &PhantomCase) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_volume(&dir.join("volume.rawvol"), &case.volume)?;
    let mut planes = String::new();
    for p in &case.gt_planes {
        planes.push_str(&write_plane_line(p));
        planes.push('\n');
    }
    fs::write(dir.join("planes.txt"), planes)?;
    write_landmarks(&dir.join("landmarks.txt"), &case.landmarks)?;
    write_landmarks(&dir.join("landmarks_observed.txt"), &case.landmarks_observed)?;
    let mut meta = fs::File::create(dir.join("meta.txt"))?;
    writeln!(meta, "seed {}", case.seed)?;
    writeln!(meta, "shape {}", case.meta.shape)?;
    writeln!(meta, "angle_spread {}", case.meta.angle_spread)?;
    writeln!(meta, "max_rotation {}", case.meta.max_rotation)?;
    writeln!(meta, "max_translation {}", case.meta.max_translation)?;
    writeln!(meta, "noise {}", case.meta.noise)?;
    writeln!(meta, "landmark_jitter {}", case.meta.landmark_jitter)?;
    Ok(())
}

fn write_landmarks(path: &Path, landmarks: &[Landmark]) -> Result<()> {
    let mut out = String::new();
    for l in landmarks {
        out.push_str(&format!(
            "{} {:.12} {:.12} {:.12}\n",
            l.label, l.p[0], l.p[1], l.p[2]
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_landmarks(path: &Path) -> Result<Vec<Landmark>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let label = it
            .next()
            .ok_or_else(|| PhantomError::Malformed("empty landmark line".into()))?
            .to_string();
        let coords: Vec<f64> = it
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| PhantomError::Malformed(format!("bad landmark line '{line}': {e}")))?;
        if coords.len() != 3 {
            return Err(PhantomError::Malformed(format!(
                "landmark line needs 3 coordinates: '{line}'"
            )));
        }
        out.push(Landmark {
            label,
            p: [coords[0], coords[1], coords[2]],
        });
    }
    Ok(out)
}

/// Load one case directory written by [`write_case`].
pub fn load_case(dir: &Path) -> Result<PhantomCase> {
    let volume = read_volume(&dir.join("volume.rawvol"))?;
    let planes_text = fs::read_to_string(dir.join("planes.txt"))?;
    let planes: Vec<Plane> = planes_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(read_plane_line)
        .collect::<crate::geometry::Result<_>>()?;
    if planes.len() != 3 {
        return Err(PhantomError::Malformed(format!(
            "expected 3 planes, found {}",
            planes.len()
        )));
    }
    let landmarks = read_landmarks(&dir.join("landmarks.txt"))?;
    let observed_path = dir.join("landmarks_observed.txt");
    let landmarks_observed = if observed_path.exists() {
        read_landmarks(&observed_path)?
    } else {
        landmarks.clone()
    };
    let meta_text = fs::read_to_string(dir.join("meta.txt"))?;
    let mut seed = 0u64;
    let mut meta = PhantomConfig::default();
    for line in meta_text.lines() {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap_or("");
        let val = it.next().unwrap_or("");
        match key {
            "seed" => seed = val.parse().map_err(|_| bad_meta(line))?,
            "shape" => meta.shape = val.parse().map_err(|_| bad_meta(line))?,
            "angle_spread" => meta.angle_spread = val.parse().map_err(|_| bad_meta(line))?,
            "max_rotation" => meta.max_rotation = val.parse().map_err(|_| bad_meta(line))?,
            "max_translation" => meta.max_translation = val.parse().map_err(|_| bad_meta(line))?,
            "noise" => meta.noise = val.parse().map_err(|_| bad_meta(line))?,
            "landmark_jitter" => meta.landmark_jitter = val.parse().map_err(|_| bad_meta(line))?,
            "" => {}
            other => {
                return Err(PhantomError::Malformed(format!(
                    "unknown meta key '{other}'"
                )))
            }
        }
    }
    Ok(PhantomCase {
        volume,
        gt_planes: [planes[0], planes[1], planes[2]],
        landmarks,
        landmarks_observed,
        seed,
        meta,
    })
}

fn bad_meta(line: &str) -> PhantomError {
    PhantomError::Malformed(format!("bad meta line '{line}'"))
}

/// Load every `case_*` sub-directory of a dataset directory, sorted by name.
pub fn load_dataset(dir: &Path) -> Result<Vec<PhantomCase>> {
    let mut case_dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n.starts_with(CASE_DIR_PREFIX))
                    .unwrap_or(false)
        })
        .collect();
    case_dirs.sort();
    if case_dirs.is_empty() {
        return Err(PhantomError::Malformed(format!(
            "no {CASE_DIR_PREFIX}* directories under {}",
            dir.display()
        )));
    }
    case_dirs.iter().map(|d| load_case(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    #[test]
    fn case_roundtrip() {
        let cfg = PhantomConfig {
            shape: 48,
            ..PhantomConfig::default()
        };
        let case = generate_phantom(42, &cfg).unwrap();
        let dir = std::env::temp_dir().join("planesearch_dataset_test/case_000");
        std::fs::create_dir_all(&dir).unwrap();
        write_case(&dir, &case).unwrap();
        let back = load_case(&dir).unwrap();
        assert_eq!(case.volume, back.volume);
        assert_eq!(case.seed, back.seed);
        assert_eq!(case.meta, back.meta);
        for k in 0..3 {
            let a = case.gt_planes[k];
            let b = back.gt_planes[k];
            assert!((a.d() - b.d()).abs() < 1e-9);
            for i in 0..3 {
                assert!((a.normal()[i] - b.normal()[i]).abs() < 1e-9);
            }
        }
        assert_eq!(case.landmarks.len(), back.landmarks.len());
        std::fs::remove_dir_all(dir.parent().unwrap()).ok();
    }
}
