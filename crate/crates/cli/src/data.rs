//! Dataset layout under `data_root`: `<id>.mhd` images, `<id>_labels.mhd`
//! label volumes and an optional `inventory.csv` assigning vendors.

use std::fs;
use std::path::{Path, PathBuf};

use octpipe::eval::{read_inventory, Inventory};
use octpipe::volume_io::{read_header, read_labels, read_volume, vendor_of, volume_id_from_path, PROB_SUFFIX};
use octpipe::{Error, LabelVolume, OctVolume, Result, Vendor};

pub const INVENTORY_FILE: &str = "inventory.csv";
pub const LABEL_SUFFIX: &str = "_labels";

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}.mhd"))
}

pub fn labels_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("{id}{LABEL_SUFFIX}.mhd"))
}

/// Vendor per volume, from `inventory.csv` or else from each image's geometry.
pub fn load_inventory(root: &Path) -> Result<Inventory> {
    let listed = root.join(INVENTORY_FILE);
    if listed.exists() {
        let f = fs::File::open(&listed).map_err(|e| Error::Io { path: listed.clone(), source: e })?;
        return read_inventory(f);
    }
    let entries = fs::read_dir(root).map_err(|e| Error::Io { path: root.to_path_buf(), source: e })?;
    let mut inv = Inventory::new();
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.extension().and_then(|e| e.to_str()) != Some("mhd") {
            continue;
        }
        let id = volume_id_from_path(&p);
        if id.ends_with(LABEL_SUFFIX) || id.ends_with(PROB_SUFFIX) {
            continue;
        }
        let dims = read_header(&p)?.dims3()?;
        let vendor = vendor_of(dims).ok_or_else(|| {
            Error::Lookup(format!(
                "{}: {dims} matches no vendor geometry; list it in {INVENTORY_FILE}",
                p.display()
            ))
        })?;
        inv.entry(vendor).or_default().push(id);
    }
    if inv.is_empty() {
        return Err(Error::Lookup(format!("no volumes found under {}", root.display())));
    }
    Ok(inv)
}

pub fn vendor_lookup(inv: &Inventory, id: &str) -> Option<Vendor> {
    inv.iter().find(|(_, ids)| ids.iter().any(|i| i == id)).map(|(&v, _)| v)
}

pub fn load_case(root: &Path, id: &str) -> Result<(OctVolume, LabelVolume)> {
    let mut image = read_volume(&image_path(root, id))?;
    image.id = id.to_string();
    Ok((image, load_labels(root, id)?))
}

pub fn load_labels(root: &Path, id: &str) -> Result<LabelVolume> {
    let mut labels = read_labels(&labels_path(root, id))?;
    labels.id = id.to_string();
    Ok(labels)
}
