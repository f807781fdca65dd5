use std::path::{Path, PathBuf};

/// Relative paths are taken under this directory when it is set.
pub const DATA_ROOT_VAR: &str = "REWARD_LENS_DATA";

pub fn resolve(path: &Path) -> PathBuf {
    resolve_under(std::env::var_os(DATA_ROOT_VAR).as_deref().map(Path::new), path)
}

pub fn resolve_under(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(root) if path.is_relative() && !root.as_os_str().is_empty() => root.join(path),
        _ => path.to_path_buf(),
    }
}
