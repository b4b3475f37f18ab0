//! Dataset fetching: download-or-reuse with checksum verification.
//!
//! Files land under `<root>/<dataset>/`. A `fetch_manifest.json` beside them
//! records the sha256 of every file on first successful fetch; later calls
//! verify against the manifest and touch the network only for missing files.
//! Expected checksums can also be pinned up front, in which case a fresh
//! download must match them. Archives (STL-10's tar.gz) are extracted in
//! place after verification.

use crate::errors::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Datasets known to the fetcher and loader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Lander,
    Stl10,
    Svhn,
}

impl std::str::FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lander" => Ok(DatasetName::Lander),
            "stl10" => Ok(DatasetName::Stl10),
            "svhn" => Ok(DatasetName::Svhn),
            other => Err(Error::InvalidConfig(format!("unknown dataset {other:?}"))),
        }
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetName::Lander => write!(f, "lander"),
            DatasetName::Stl10 => write!(f, "stl10"),
            DatasetName::Svhn => write!(f, "svhn"),
        }
    }
}

/// Remote files per dataset. The lander collection is generated, not
/// fetched.
pub fn remote_files(name: DatasetName) -> &'static [(&'static str, &'static str)] {
    match name {
        DatasetName::Lander => &[],
        DatasetName::Stl10 => &[(
            "stl10_binary.tar.gz",
            "http://ai.stanford.edu/~acoates/stl10/stl10_binary.tar.gz",
        )],
        DatasetName::Svhn => &[
            (
                "train_32x32.mat",
                "http://ufldl.stanford.edu/housenumbers/train_32x32.mat",
            ),
            (
                "test_32x32.mat",
                "http://ufldl.stanford.edu/housenumbers/test_32x32.mat",
            ),
            (
                "extra_32x32.mat",
                "http://ufldl.stanford.edu/housenumbers/extra_32x32.mat",
            ),
        ],
    }
}

/// Transport abstraction so tests can serve files from a local directory.
pub trait FetchSource {
    fn fetch(&self, url: &str, dest: &Path) -> Result<()>;
}

/// HTTP transport.
pub struct HttpSource;

impl FetchSource for HttpSource {
    fn fetch(&self, url: &str, dest: &Path) -> Result<()> {
        let retriable_err = |msg: String| Error::Download {
            url: url.to_string(),
            msg,
            retriable: true,
        };
        let resp = reqwest::blocking::get(url).map_err(|e| retriable_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(retriable_err(format!("status {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| retriable_err(e.to_string()))?;
        std::fs::write(dest, &bytes).map_err(|e| Error::io(dest, e))?;
        Ok(())
    }
}

/// Serves files by name from a local mirror directory.
pub struct DirSource {
    pub dir: PathBuf,
}

impl FetchSource for DirSource {
    fn fetch(&self, url: &str, dest: &Path) -> Result<()> {
        let file_name = url.rsplit('/').next().unwrap_or(url);
        let src = self.dir.join(file_name);
        if !src.exists() {
            return Err(Error::Download {
                url: url.to_string(),
                msg: format!("{} not present in mirror {}", file_name, self.dir.display()),
                retriable: true,
            });
        }
        std::fs::copy(&src, dest).map_err(|e| Error::io(dest, e))?;
        Ok(())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FetchManifest {
    /// file name -> sha256 hex.
    files: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("fetch_manifest.json")
}

fn load_manifest(dir: &Path) -> Result<FetchManifest> {
    let path = manifest_path(dir);
    if !path.exists() {
        return Ok(FetchManifest::default());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path, source: e })
}

fn store_manifest(dir: &Path, manifest: &FetchManifest) -> Result<()> {
    let path = manifest_path(dir);
    std::fs::write(&path, serde_json::to_string_pretty(manifest).unwrap())
        .map_err(|e| Error::io(&path, e))
}

/// Ensures the dataset's files are present and checksum-verified under
/// `<root>/<name>`, fetching what is missing. `expected` pins checksums for
/// freshly downloaded files; files already recorded in the manifest are
/// verified against the manifest (so tampering surfaces as a checksum
/// error). Returns the dataset directory. Idempotent: a warm cache touches
/// no network.
pub fn fetch_dataset(
    name: DatasetName,
    root: &Path,
    source: &dyn FetchSource,
    expected: &BTreeMap<String, String>,
) -> Result<PathBuf> {
    let dir = root.join(name.to_string());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut manifest = load_manifest(&dir)?;
    let mut changed = false;

    for &(file_name, url) in remote_files(name) {
        let dest = dir.join(file_name);
        let recorded = manifest.files.get(file_name).cloned();
        if dest.exists() {
            let actual = sha256_file(&dest)?;
            let reference = recorded.or_else(|| expected.get(file_name).cloned());
            match reference {
                Some(reference) if reference != actual => {
                    return Err(Error::Checksum {
                        path: dest,
                        expected: reference,
                        found: actual,
                    });
                }
                _ => {
                    // present and consistent: record if new, no refetch
                    if manifest.files.get(file_name) != Some(&actual) {
                        manifest.files.insert(file_name.to_string(), actual);
                        changed = true;
                    }
                    continue;
                }
            }
        }
        source.fetch(url, &dest)?;
        let actual = sha256_file(&dest)?;
        if let Some(pin) = expected.get(file_name) {
            if *pin != actual {
                return Err(Error::Checksum {
                    path: dest,
                    expected: pin.clone(),
                    found: actual,
                });
            }
        }
        manifest.files.insert(file_name.to_string(), actual);
        changed = true;
    }
    if changed {
        store_manifest(&dir, &manifest)?;
    }

    if name == DatasetName::Stl10 {
        extract_stl10(&dir)?;
    }
    Ok(dir)
}

/// Unpacks `stl10_binary.tar.gz` unless the binaries are already present.
fn extract_stl10(dir: &Path) -> Result<()> {
    let target = dir.join("stl10_binary");
    if target.join("unlabeled_X.bin").exists() {
        return Ok(());
    }
    let archive_path = dir.join("stl10_binary.tar.gz");
    let file = std::fs::File::open(&archive_path).map_err(|e| Error::io(&archive_path, e))?;
    let gz = flate2::read::GzDecoder::new(std::io::BufReader::new(file));
    tar::Archive::new(gz)
        .unpack(dir)
        .map_err(|e| Error::dataset(&archive_path, format!("extract failed: {e}")))?;
    if !target.exists() {
        return Err(Error::dataset(
            &archive_path,
            "archive did not contain stl10_binary/",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct CountingSource<'a> {
        inner: DirSource,
        calls: &'a Cell<usize>,
    }

    impl FetchSource for CountingSource<'_> {
        fn fetch(&self, url: &str, dest: &Path) -> Result<()> {
            self.calls.set(self.calls.get() + 1);
            self.inner.fetch(url, dest)
        }
    }

    fn mirror_with_svhn() -> tempfile::TempDir {
        let mirror = tempfile::tempdir().unwrap();
        for f in ["train_32x32.mat", "test_32x32.mat", "extra_32x32.mat"] {
            std::fs::write(mirror.path().join(f), format!("payload of {f}")).unwrap();
        }
        mirror
    }

    #[test]
    fn warm_cache_touches_no_network() {
        let mirror = mirror_with_svhn();
        let root = tempfile::tempdir().unwrap();
        let calls = Cell::new(0);
        let source = CountingSource {
            inner: DirSource {
                dir: mirror.path().to_path_buf(),
            },
            calls: &calls,
        };
        let none = BTreeMap::new();
        let dir = fetch_dataset(DatasetName::Svhn, root.path(), &source, &none).unwrap();
        assert_eq!(calls.get(), 3);
        assert!(dir.join("train_32x32.mat").exists());
        fetch_dataset(DatasetName::Svhn, root.path(), &source, &none).unwrap();
        assert_eq!(calls.get(), 3, "second fetch must be a no-op");
    }

    #[test]
    fn tampered_file_fails_checksum() {
        let mirror = mirror_with_svhn();
        let root = tempfile::tempdir().unwrap();
        let source = DirSource {
            dir: mirror.path().to_path_buf(),
        };
        let none = BTreeMap::new();
        let dir = fetch_dataset(DatasetName::Svhn, root.path(), &source, &none).unwrap();
        std::fs::write(dir.join("test_32x32.mat"), "tampered").unwrap();
        let err = fetch_dataset(DatasetName::Svhn, root.path(), &source, &none).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
    }

    #[test]
    fn pinned_checksum_mismatch_rejects_download() {
        let mirror = mirror_with_svhn();
        let root = tempfile::tempdir().unwrap();
        let source = DirSource {
            dir: mirror.path().to_path_buf(),
        };
        let mut expected = BTreeMap::new();
        expected.insert("train_32x32.mat".to_string(), "00".repeat(32));
        let err = fetch_dataset(DatasetName::Svhn, root.path(), &source, &expected).unwrap_err();
        assert!(matches!(err, Error::Checksum { .. }), "{err}");
    }

    #[test]
    fn missing_mirror_file_is_retriable() {
        let mirror = tempfile::tempdir().unwrap();
        let root = tempfile::tempdir().unwrap();
        let source = DirSource {
            dir: mirror.path().to_path_buf(),
        };
        let err =
            fetch_dataset(DatasetName::Svhn, root.path(), &source, &BTreeMap::new()).unwrap_err();
        match err {
            Error::Download { retriable, .. } => assert!(retriable),
            other => panic!("expected download error, got {other}"),
        }
    }

    #[test]
    fn fresh_root_creates_files_under_root_name() {
        let mirror = mirror_with_svhn();
        let root = tempfile::tempdir().unwrap();
        let source = DirSource {
            dir: mirror.path().to_path_buf(),
        };
        let dir =
            fetch_dataset(DatasetName::Svhn, root.path(), &source, &BTreeMap::new()).unwrap();
        assert_eq!(dir, root.path().join("svhn"));
        assert!(dir.join("fetch_manifest.json").exists());
    }

    #[test]
    fn stl10_archive_is_extracted() {
        // build a tiny tar.gz shaped like the real archive
        let mirror = tempfile::tempdir().unwrap();
        let archive = mirror.path().join("stl10_binary.tar.gz");
        {
            let file = std::fs::File::create(&archive).unwrap();
            let gz = flate2::write::GzEncoder::new(file, flate2::Compression::default());
            let mut tarb = tar::Builder::new(gz);
            let content = b"stl".to_vec();
            let mut header = tar::Header::new_gnu();
            header.set_size(content.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            tarb.append_data(
                &mut header,
                "stl10_binary/unlabeled_X.bin",
                content.as_slice(),
            )
            .unwrap();
            tarb.into_inner().unwrap().finish().unwrap();
        }
        let root = tempfile::tempdir().unwrap();
        let source = DirSource {
            dir: mirror.path().to_path_buf(),
        };
        let dir =
            fetch_dataset(DatasetName::Stl10, root.path(), &source, &BTreeMap::new()).unwrap();
        assert!(dir.join("stl10_binary/unlabeled_X.bin").exists());
    }
}
