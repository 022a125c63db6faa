//! Confinement of file tools to the session working directory.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};

use thiserror::Error;

/// Symlink hops followed before giving up, as in `realpath(3)`.
const MAX_SYMLINK_HOPS: usize = 40;

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("path `{0}` escapes the working directory")]
    Escape(String),
    #[error("path `{0}` is not valid (empty or contains NUL)")]
    InvalidPath(String),
    #[error("too many levels of symbolic links in `{0}`")]
    SymlinkLoop(String),
    #[error("working directory {path}: {source}")]
    Root {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("I/O error resolving `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A canonical working directory that every tool path must stay inside.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sandbox {
    root: PathBuf,
}

impl Sandbox {
    pub fn new(workdir: impl AsRef<Path>) -> Result<Self, SandboxError> {
        let path = workdir.as_ref();
        let root = fs::canonicalize(path).map_err(|source| SandboxError::Root {
            path: path.to_path_buf(),
            source,
        })?;
        if !root.is_dir() {
            return Err(SandboxError::Root {
                path: path.to_path_buf(),
                source: io::Error::new(io::ErrorKind::NotADirectory, "not a directory"),
            });
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Resolves `candidate` to an absolute path inside the root.
    ///
    /// Every component that exists on disk is resolved through symlinks; the
    /// non-existent tail is normalized lexically. The result is rejected
    /// unless it lies under the root. Absolute candidates are accepted only
    /// if they resolve inside the root.
    pub fn resolve(&self, candidate: &str) -> Result<PathBuf, SandboxError> {
        if candidate.is_empty() || candidate.contains('\0') {
            return Err(SandboxError::InvalidPath(candidate.to_string()));
        }
        let resolved = resolve_beneath(&self.root, Path::new(candidate))
            .map_err(|e| self.tag(e, candidate))?;
        if resolved.starts_with(&self.root) {
            Ok(resolved)
        } else {
            Err(SandboxError::Escape(candidate.to_string()))
        }
    }

    /// Path of `abs` relative to the root, using `/` separators.
    pub fn relative(&self, abs: &Path) -> Option<String> {
        let rel = abs.strip_prefix(&self.root).ok()?;
        let parts: Vec<String> = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        Some(parts.join("/"))
    }

    fn tag(&self, e: ResolveError, candidate: &str) -> SandboxError {
        match e {
            ResolveError::Loop => SandboxError::SymlinkLoop(candidate.to_string()),
            ResolveError::Io(source) => SandboxError::Io {
                path: candidate.to_string(),
                source,
            },
        }
    }
}

enum ResolveError {
    Loop,
    Io(io::Error),
}

/// `realpath` that tolerates a missing tail.
fn resolve_beneath(root: &Path, candidate: &Path) -> Result<PathBuf, ResolveError> {
    let mut pending: VecDeque<OsString> = VecDeque::new();
    let mut current = if candidate.is_absolute() {
        PathBuf::from("/")
    } else {
        root.to_path_buf()
    };
    push_components(&mut pending, candidate, true);

    let mut hops = 0;
    while let Some(part) = pending.pop_front() {
        if part == "/" {
            current = PathBuf::from("/");
            continue;
        }
        if part == ".." {
            current.pop();
            continue;
        }
        let next = current.join(&part);
        match fs::symlink_metadata(&next) {
            Ok(meta) if meta.file_type().is_symlink() => {
                hops += 1;
                if hops > MAX_SYMLINK_HOPS {
                    return Err(ResolveError::Loop);
                }
                let target = fs::read_link(&next).map_err(ResolveError::Io)?;
                if target.is_absolute() {
                    current = PathBuf::from("/");
                }
                push_components(&mut pending, &target, false);
            }
            Ok(_) => current = next,
            Err(e) if e.kind() == io::ErrorKind::NotFound => current = next,
            // ENOTDIR and friends: the path cannot exist, keep it lexical.
            Err(e) if e.raw_os_error() == Some(libc::ENOTDIR) => current = next,
            Err(e) => return Err(ResolveError::Io(e)),
        }
    }
    Ok(current)
}

/// Queues the components of `path`; `back` appends, otherwise they are
/// prepended in order (used when splicing in a symlink target).
fn push_components(pending: &mut VecDeque<OsString>, path: &Path, back: bool) {
    let parts: Vec<OsString> = path
        .components()
        .filter_map(|c| match c {
            Component::RootDir => Some(OsString::from("/")),
            Component::ParentDir => Some(OsString::from("..")),
            Component::Normal(n) => Some(n.to_os_string()),
            Component::CurDir | Component::Prefix(_) => None,
        })
        .collect();
    if back {
        pending.extend(parts);
    } else {
        for part in parts.into_iter().rev() {
            pending.push_front(part);
        }
    }
}
