//! Dataset snapshot CSVs (`x0,…,x{d−1},label,provenance,cycle`) and the world
//! directory: one snapshot per split plus a `world.meta` key-value sidecar.

use std::fmt::Write as _;
use std::path::Path;

use galforge_core::pools::Pools;
use galforge_core::world::{make_world, Dataset, Layout, World, WorldSpec};
use galforge_core::Tensor;

use crate::config::KvFile;
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_to_string};

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub x: Vec<f64>,
    pub label: usize,
    /// `pool`, `generated` or `world`.
    pub provenance: String,
    pub cycle: usize,
}

pub fn header(dim: usize) -> String {
    let mut h: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    h.extend(["label", "provenance", "cycle"].map(String::from));
    h.join(",")
}

/// `{}` on f64 prints the shortest decimal that parses back to the same value.
pub fn render(dim: usize, rows: &[SnapshotRow]) -> String {
    let mut s = header(dim);
    s.push('\n');
    for r in rows {
        for v in &r.x {
            write!(s, "{v},").unwrap();
        }
        writeln!(s, "{},{},{}", r.label, r.provenance, r.cycle).unwrap();
    }
    s
}

pub fn write_snapshot(path: &Path, dim: usize, rows: &[SnapshotRow]) -> Result<()> {
    atomic_write(path, render(dim, rows).as_bytes())
}

pub fn parse_snapshot(path: &Path, text: &str) -> Result<(usize, Vec<SnapshotRow>)> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() < 4 || header(cols.len() - 3) != head {
        return Err(err(1, format!("unexpected header `{head}`")));
    }
    let dim = cols.len() - 3;
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 3 {
            return Err(err(n, format!("expected {} fields, got {}", dim + 3, f.len())));
        }
        let x = f[..dim]
            .iter()
            .map(|v| v.parse::<f64>().map_err(|e| err(n, format!("`{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let label = f[dim].parse().map_err(|e| err(n, format!("label: {e}")))?;
        let provenance = f[dim + 1].to_string();
        if !matches!(provenance.as_str(), "pool" | "generated" | "world") {
            return Err(err(n, format!("unknown provenance `{provenance}`")));
        }
        let cycle = f[dim + 2].parse().map_err(|e| err(n, format!("cycle: {e}")))?;
        rows.push(SnapshotRow {
            x,
            label,
            provenance,
            cycle,
        });
    }
    Ok((dim, rows))
}

pub fn read_snapshot(path: &Path) -> Result<(usize, Vec<SnapshotRow>)> {
    parse_snapshot(path, &read_to_string(path)?)
}

/// L (selection order) followed by G (generation order).
pub fn pools_snapshot(pools: &Pools) -> Vec<SnapshotRow> {
    let mut rows = labeled_rows(pools);
    rows.extend(generated_rows(pools));
    rows
}

pub fn labeled_rows(pools: &Pools) -> Vec<SnapshotRow> {
    pools
        .labeled()
        .iter()
        .map(|p| SnapshotRow {
            x: p.x.clone(),
            label: p.y,
            provenance: "pool".into(),
            cycle: p.cycle,
        })
        .collect()
}

pub fn generated_rows(pools: &Pools) -> Vec<SnapshotRow> {
    pools
        .generated()
        .iter()
        .map(|p| SnapshotRow {
            x: p.x.clone(),
            label: p.label,
            provenance: "generated".into(),
            cycle: p.cycle,
        })
        .collect()
}

pub fn rows_to_dataset(dim: usize, rows: &[&SnapshotRow]) -> Result<Dataset> {
    let xs: Vec<f64> = rows.iter().flat_map(|r| r.x.iter().copied()).collect();
    Ok(Dataset {
        xs: Tensor::matrix(rows.len(), dim, xs)?,
        ys: rows.iter().map(|r| r.label).collect(),
    })
}

fn split_rows(data: &Dataset) -> Vec<SnapshotRow> {
    (0..data.len())
        .map(|i| SnapshotRow {
            x: data.point(i).to_vec(),
            label: data.ys[i],
            provenance: "world".into(),
            cycle: 0,
        })
        .collect()
}

const SPLITS: [&str; 3] = ["pretrain", "pool", "test"];

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn world_meta(world: &World) -> String {
    let s = &world.spec;
    let mut out = String::new();
    for (k, v) in [
        ("classes", s.classes.to_string()),
        ("dim", s.dim.to_string()),
        ("layout", s.layout.name().to_string()),
        ("class_std", s.class_std.to_string()),
        ("spacing", s.spacing.to_string()),
        ("pretrain_n", s.pretrain_n.to_string()),
        ("pool_n", s.pool_n.to_string()),
        ("test_n", s.test_n.to_string()),
        ("seed", s.seed.to_string()),
    ] {
        writeln!(out, "world.{k} = {v}").unwrap();
    }
    for c in 0..world.classes() {
        writeln!(out, "mixture.mean.{c} = {}", join(world.means.row(c))).unwrap();
    }
    writeln!(out, "mixture.std = {}", join(&world.stds)).unwrap();
    writeln!(out, "normalize.mean = {}", join(&world.norm_mean)).unwrap();
    writeln!(out, "normalize.scale = {}", join(&world.norm_scale)).unwrap();
    writeln!(out, "bayes_ceiling = {}", world.bayes_ceiling()).unwrap();
    out
}

pub fn save_world(dir: &Path, world: &World) -> Result<()> {
    for (name, data) in SPLITS.iter().zip([&world.pretrain, &world.pool, &world.test]) {
        write_snapshot(&dir.join(format!("{name}.csv")), world.dim(), &split_rows(data))?;
    }
    atomic_write(&dir.join("world.meta"), world_meta(world).as_bytes())
}

pub fn spec_from_kv(kv: &KvFile) -> Result<WorldSpec> {
    let d = WorldSpec::default();
    Ok(WorldSpec {
        classes: kv.get_or("world.classes", d.classes)?,
        dim: kv.get_or("world.dim", d.dim)?,
        layout: match kv.raw("world.layout") {
            Some(v) => Layout::parse(v)?,
            None => d.layout,
        },
        class_std: kv.get_or("world.class_std", d.class_std)?,
        spacing: kv.get_or("world.spacing", d.spacing)?,
        pretrain_n: kv.get_or("world.pretrain_n", d.pretrain_n)?,
        pool_n: kv.get_or("world.pool_n", d.pool_n)?,
        test_n: kv.get_or("world.test_n", d.test_n)?,
        seed: kv.get_or("world.seed", d.seed)?,
    })
}

/// Rebuild the world from its sidecar and check it against the stored splits.
pub fn load_world(dir: &Path) -> Result<World> {
    let meta_path = dir.join("world.meta");
    let kv = KvFile::parse(&meta_path, &read_to_string(&meta_path)?)?;
    let world = make_world(&spec_from_kv(&kv)?)?;
    if world_meta(&world) != read_to_string(&meta_path)? {
        return Err(mismatch(&meta_path));
    }
    for (name, data) in SPLITS.iter().zip([&world.pretrain, &world.pool, &world.test]) {
        let path = dir.join(format!("{name}.csv"));
        let (_, rows) = read_snapshot(&path)?;
        if rows != split_rows(data) {
            return Err(mismatch(&path));
        }
    }
    Ok(world)
}

fn mismatch(path: &Path) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: "does not match the world regenerated from world.meta".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip_is_exact() {
        let rows = vec![
            SnapshotRow {
                x: vec![0.1 + 0.2, -1e-310],
                label: 3,
                provenance: "generated".into(),
                cycle: 2,
            },
            SnapshotRow {
                x: vec![std::f64::consts::PI, 12345.678],
                label: 0,
                provenance: "pool".into(),
                cycle: 1,
            },
        ];
        let text = render(2, &rows);
        assert!(text.starts_with("x0,x1,label,provenance,cycle\n"));
        let (dim, back) = parse_snapshot(Path::new("mem"), &text).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(back, rows);
        for (a, b) in rows.iter().zip(&back) {
            for (x, y) in a.x.iter().zip(&b.x) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_rows() {
        let p = Path::new("mem");
        assert!(parse_snapshot(p, "x0,label,provenance,cycle\n1,2,pool\n").is_err());
        assert!(parse_snapshot(p, "x0,label,provenance,cycle\n1,2,human,1\n").is_err());
        assert!(parse_snapshot(p, "a,b\n").is_err());
    }

    #[test]
    fn world_directory_round_trip() {
        let spec = WorldSpec {
            pretrain_n: 300,
            pool_n: 100,
            test_n: 50,
            seed: 5,
            ..WorldSpec::default()
        };
        let world = make_world(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_world(dir.path(), &world).unwrap();
        let back = load_world(dir.path()).unwrap();
        assert_eq!(back.pool, world.pool);
        assert!(read_to_string(&dir.path().join("world.meta")).unwrap().contains("bayes_ceiling = "));
    }
}
