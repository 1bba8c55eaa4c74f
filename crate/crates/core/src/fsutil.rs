//! Small filesystem helpers shared by the stores.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::Path;

/// Writes `data` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    write_atomic_with(path, data, || {})
}

/// [`write_atomic`] with a hook that runs between the temp write and the rename.
pub fn write_atomic_with(path: &Path, data: &[u8], before_rename: impl FnOnce()) -> io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    before_rename();
    fs::rename(&tmp, path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}
