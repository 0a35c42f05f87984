//! On-disk dataset format: a `manifest.json` plus one raw little-endian
//! `f64` file per array. Complex arrays interleave real and imaginary parts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ComplexMat, CoordSet, Dataset, DatasetMeta, Field, Spectrum};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub complex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub system: String,
    pub seed: u64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub grid_shape: [usize; 2],
    pub sensor_indices: Vec<usize>,
    pub noise_sigma: f64,
    pub arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    pub sensor_fraction: f64,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{} has {} bytes, not a whole number of f64 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn interleave(z: impl IntoIterator<Item = Complex64>) -> Vec<f64> {
    z.into_iter().flat_map(|c| [c.re, c.im]).collect()
}

fn deinterleave(v: &[f64]) -> Vec<Complex64> {
    v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

struct Writer<'a> {
    dir: &'a Path,
    arrays: BTreeMap<String, ArrayEntry>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, shape: Vec<usize>, complex: bool, data: &[f64]) -> Result<()> {
        let file = format!("{name}.bin");
        write_f64s(&self.dir.join(&file), data)?;
        self.arrays.insert(name.to_string(), ArrayEntry { file, shape, complex });
        Ok(())
    }
}

/// Writes `ds` under `dir`, creating the directory if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut w = Writer {
        dir,
        arrays: BTreeMap::new(),
    };
    let p = ds.len();
    let m = ds.sensor_set.len();
    let n = ds.full_grid.len();
    w.put(
        "observations",
        vec![p, m],
        true,
        &interleave(ds.observations.iter().flat_map(|f| f.values.iter().copied())),
    )?;
    if let Some(truth) = &ds.truth {
        w.put(
            "truth",
            vec![p, n],
            true,
            &interleave(truth.iter().flat_map(|f| f.values.iter().copied())),
        )?;
    }
    w.put("grid_coords", vec![n, ds.full_grid.dim()], false, ds.full_grid.as_flat())?;
    if let Some(spec) = &ds.gt_spectrum {
        let r = spec.rank();
        w.put("gt_modes", vec![n, r], true, &interleave(spec.modes.as_slice().iter().copied()))?;
        w.put("gt_lambdas", vec![r], true, &interleave(spec.lambdas.iter().copied()))?;
        w.put("gt_mus", vec![r], true, &interleave(spec.mus.iter().copied()))?;
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        system: ds.meta.system.clone(),
        seed: ds.meta.seed,
        dt: ds.dt,
        times: ds.times(),
        grid_shape: [ds.grid_shape.0, ds.grid_shape.1],
        sensor_indices: ds.sensor_indices.clone(),
        noise_sigma: ds.meta.noise_sigma,
        arrays: w.arrays,
        sensor_fraction: ds.meta.sensor_fraction,
        params: ds.meta.params.clone(),
    };
    write_json(&dir.join(MANIFEST), &manifest)
}

fn load_array(dir: &Path, man: &Manifest, name: &str, shape: &[usize], complex: bool) -> Result<Vec<f64>> {
    let entry = man
        .arrays
        .get(name)
        .ok_or_else(|| Error::Format(format!("manifest has no array `{name}`")))?;
    if entry.shape != shape || entry.complex != complex {
        return Err(Error::Format(format!(
            "array `{name}` declared {:?} (complex={}), expected {:?} (complex={complex})",
            entry.shape, entry.complex, shape
        )));
    }
    let data = read_f64s(&dir.join(&entry.file))?;
    let want = shape.iter().product::<usize>() * if complex { 2 } else { 1 };
    if data.len() != want {
        return Err(Error::Format(format!(
            "array `{name}` holds {} values, manifest shape needs {want}",
            data.len()
        )));
    }
    Ok(data)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let man: Manifest = read_json(&dir.join(MANIFEST))?;
    if man.version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported manifest version {}", man.version)));
    }
    Ok(man)
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let man = load_manifest(dir)?;
    let n = man.grid_shape[0] * man.grid_shape[1];
    let p = man.times.len();
    let m = man.sensor_indices.len();
    let dim = man
        .arrays
        .get("grid_coords")
        .and_then(|e| e.shape.get(1).copied())
        .ok_or_else(|| Error::Format("manifest has no usable `grid_coords`".into()))?;
    let coords = load_array(dir, &man, "grid_coords", &[n, dim], false)?;
    let full_grid = CoordSet::new(dim, coords)?;

    let obs = deinterleave(&load_array(dir, &man, "observations", &[p, m], true)?);
    let observations: Vec<Field> = (0..p)
        .map(|k| Field::new(obs[k * m..(k + 1) * m].to_vec(), man.times[k]))
        .collect();
    let truth = if man.arrays.contains_key("truth") {
        let v = deinterleave(&load_array(dir, &man, "truth", &[p, n], true)?);
        Some(
            (0..p)
                .map(|k| Field::new(v[k * n..(k + 1) * n].to_vec(), man.times[k]))
                .collect(),
        )
    } else {
        None
    };
    let gt_spectrum = if let Some(e) = man.arrays.get("gt_lambdas") {
        let r = *e.shape.first().ok_or_else(|| Error::Format("empty gt_lambdas shape".into()))?;
        let lambdas = deinterleave(&load_array(dir, &man, "gt_lambdas", &[r], true)?);
        let mus = deinterleave(&load_array(dir, &man, "gt_mus", &[r], true)?);
        let modes = deinterleave(&load_array(dir, &man, "gt_modes", &[n, r], true)?);
        Some(Spectrum {
            lambdas,
            mus,
            modes: ComplexMat::from_vec(n, r, modes)?,
        })
    } else {
        None
    };
    let meta = DatasetMeta {
        system: man.system.clone(),
        seed: man.seed,
        noise_sigma: man.noise_sigma,
        sensor_fraction: man.sensor_fraction,
        params: man.params.clone(),
    };
    Dataset::new(
        meta,
        (man.grid_shape[0], man.grid_shape[1]),
        full_grid,
        man.sensor_indices.clone(),
        man.dt,
        observations,
        truth,
        gt_spectrum,
    )
}
