//! C ABI over the dependency graph and testing plan.
//!
//! Conventions:
//! * every fallible call returns an [`AcStatus`]; results come back through
//!   out-pointers, which are left untouched on failure
//! * strings returned to the caller are owned by it and must be released
//!   with [`ac_string_free`]
//! * on failure [`ac_last_error_message`] describes the error for the
//!   calling thread
//!
//! See `include/agilecoder.h` for the generated declarations.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use agilecoder::exec::parse_traceback;
use agilecoder::graph::{CodeDependencyGraph, CodeGraphGenerator};
use agilecoder::workspace::{ChangedFileSet, RelPath, SourceFilter, WorkspaceSnapshot};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidPath = 5,
    UnknownNode = 6,
    Panic = 99,
}

/// Dependency graph of a workspace directory, with the snapshot it was
/// built from. Opaque to C.
pub struct AcGraph {
    snapshot: WorkspaceSnapshot,
    graph: CodeDependencyGraph,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AcStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(AcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn graph_arg<'a>(g: *const AcGraph) -> Result<&'a AcGraph, Failure> {
    g.as_ref()
        .ok_or_else(|| Failure(AcStatus::NullArgument, "graph is null".into()))
}

fn out_arg<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(AcStatus::NullArgument, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Builds the graph of every source file under `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_build_from_dir(dir: *const c_char, out: *mut *mut AcGraph) -> AcStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        out_arg(out)?;
        let snapshot = WorkspaceSnapshot::capture(Path::new(dir), 0, &SourceFilter::default())
            .map_err(|e| Failure(AcStatus::Io, e.to_string()))?;
        let graph = CodeGraphGenerator::default()
            .build(&snapshot)
            .map_err(|e| Failure(AcStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(AcGraph { snapshot, graph }));
        Ok(())
    })
}

/// Releases a graph. Null is ignored.
///
/// # Safety
/// `g` must come from [`ac_graph_build_from_dir`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_free(g: *mut AcGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `g` must be a live graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_node_count(g: *const AcGraph, out: *mut usize) -> AcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        out_arg(out)?;
        *out = g.graph.nodes().len();
        Ok(())
    })
}

/// # Safety
/// `g` must be a live graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_edge_count(g: *const AcGraph, out: *mut usize) -> AcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        out_arg(out)?;
        *out = g.graph.edges().count();
        Ok(())
    })
}

/// Text form of the graph: one node per line, then one
/// `dependent -> dependency` line per edge.
///
/// # Safety
/// `g` must be a live graph and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_export(g: *const AcGraph, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        out_arg(out)?;
        *out = to_c(g.graph.export_text());
        Ok(())
    })
}

unsafe fn changed_set(g: &AcGraph, changed: *const *const c_char, len: usize) -> Result<ChangedFileSet, Failure> {
    if changed.is_null() && len > 0 {
        return Err(Failure(AcStatus::NullArgument, "changed is null".into()));
    }
    let mut set = ChangedFileSet::default();
    for i in 0..len {
        let raw = str_arg(*changed.add(i), "changed path")?;
        let path = RelPath::new(raw).map_err(|e| Failure(AcStatus::InvalidPath, e.to_string()))?;
        if !g.snapshot.contains(&path) {
            return Err(Failure(AcStatus::UnknownNode, format!("`{raw}` is not in the workspace")));
        }
        set.modified.insert(path);
    }
    Ok(set)
}

fn targets_of(g: &AcGraph, set: &ChangedFileSet) -> BTreeSet<RelPath> {
    g.graph.test_targets(set)
}

/// Files to test after `changed` (an array of `len` workspace-relative
/// paths) changed, one per line, sorted.
///
/// # Safety
/// `g` must be a live graph, `changed` an array of `len` NUL-terminated
/// strings (may be null when `len` is 0) and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_graph_test_targets(
    g: *const AcGraph,
    changed: *const *const c_char,
    len: usize,
    out: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        out_arg(out)?;
        let set = changed_set(g, changed, len)?;
        let text: String = targets_of(g, &set).iter().map(|t| format!("{t}\n")).collect();
        *out = to_c(text);
        Ok(())
    })
}

/// Like [`ac_graph_test_targets`] but in testing order, dependencies first.
/// Each line is `<target> <test script>`.
///
/// # Safety
/// Same as [`ac_graph_test_targets`].
#[no_mangle]
pub unsafe extern "C" fn ac_graph_testing_order(
    g: *const AcGraph,
    changed: *const *const c_char,
    len: usize,
    out: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        out_arg(out)?;
        let set = changed_set(g, changed, len)?;
        let plan = g.graph.testing_order(&targets_of(g, &set));
        let text: String = plan
            .ordered_targets
            .iter()
            .map(|t| format!("{t} {}\n", plan.per_target_scripts[t]))
            .collect();
        *out = to_c(text);
        Ok(())
    })
}

/// Parses Python interpreter stderr into JSON:
/// `{"error_type":..,"error_message":..,"frames":[{"file":..,"line":..,"symbol":..}]}`.
///
/// # Safety
/// `stderr` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ac_parse_traceback(stderr: *const c_char, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let text = str_arg(stderr, "stderr")?;
        out_arg(out)?;
        let tb = parse_traceback(text);
        let frames: Vec<_> = tb
            .frames
            .iter()
            .map(|f| serde_json::json!({"file": f.file, "line": f.line, "symbol": f.symbol}))
            .collect();
        let json = serde_json::json!({
            "error_type": tb.error_type,
            "error_message": tb.error_message,
            "frames": frames,
        });
        *out = to_c(json.to_string());
        Ok(())
    })
}

/// Message for the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
