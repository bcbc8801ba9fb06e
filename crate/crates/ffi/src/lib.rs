//! C ABI for the `plap` library.
//!
//! Objects are opaque handles created by `plap_cloud_sample` and
//! `plap_graph_build` and released by the matching `plap_*_free`. Every fallible call
//! returns a [`PlapStatus`]; on failure the message is available from
//! [`plap_last_error_message`] on the same thread until the next failing
//! call. Panics are caught at the boundary and reported as
//! [`PlapStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use plap::continuum::sigma_eta;
use plap::energy::dirichlet_energy;
use plap::graph::{build_graph, connectivity_radius, is_connected};
use plap::harness::{solve_model, Model};
use plap::sampling::sample_cloud;
use plap::{Domain, Error, KernelKind, KernelProfile, LabeledPoint, PointCloud, SolveOptions, WeightedGraph};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InfeasibleConstraints = 3,
    Unsupported = 4,
    InvalidProfile = 5,
    SingularSystem = 6,
    NoData = 7,
    Config = 8,
    Io = 9,
    /// The buffer passed in is shorter than the result.
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlapKernel {
    Indicator = 0,
    /// `exp(-t)` truncated at 40; the support argument is ignored.
    Exponential = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlapModel {
    Constrained = 0,
    /// Uses `q` and `lambda`.
    Penalized = 1,
    /// Uses `radius_multiplier`.
    Improved = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlapSolveOptions {
    pub max_sweeps: usize,
    pub rel_energy_tol: f64,
    pub coord_tol: f64,
    pub clip_to_labels: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlapSolveReport {
    pub final_energy: f64,
    pub sweeps_used: usize,
    pub converged: bool,
    pub graph_connected: bool,
}

/// Sampled point cloud; labeled points occupy the first indices.
pub struct PlapCloud(Arc<PointCloud>);

/// ε-neighborhood graph over a cloud.
pub struct PlapGraph(WeightedGraph);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PlapStatus {
    match e {
        Error::InvalidArgument(_) => PlapStatus::InvalidArgument,
        Error::InfeasibleConstraints(_) => PlapStatus::InfeasibleConstraints,
        Error::Unsupported(_) => PlapStatus::Unsupported,
        Error::InvalidProfile(_) => PlapStatus::InvalidProfile,
        Error::SingularSystem { .. } => PlapStatus::SingularSystem,
        Error::NoData(_) => PlapStatus::NoData,
        Error::Config { .. } => PlapStatus::Config,
        Error::Io { .. } | Error::Csv { .. } => PlapStatus::Io,
    }
}

/// Failure inside the boundary layer itself.
struct Fail(PlapStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PlapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PlapStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PlapStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(PlapStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

fn profile(kernel: PlapKernel, support: f64) -> Result<KernelProfile, Fail> {
    Ok(match kernel {
        PlapKernel::Indicator => KernelProfile::new(KernelKind::Indicator, support)?,
        PlapKernel::Exponential => KernelProfile::exponential(),
    })
}

/// Message of the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn plap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn plap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn plap_solve_options_default() -> PlapSolveOptions {
    let d = SolveOptions::default();
    PlapSolveOptions {
        max_sweeps: d.max_sweeps,
        rel_energy_tol: d.rel_energy_tol,
        coord_tol: d.coord_tol,
        clip_to_labels: d.clip_to_labels,
    }
}

/// `σ_η = ∫ η(|h|) |h_1|^p dh` for the given profile.
///
/// # Safety
/// `out` must be a valid pointer to a `double`.
#[no_mangle]
pub unsafe extern "C" fn plap_sigma_eta(
    kernel: PlapKernel,
    support: f64,
    p: f64,
    dim: usize,
    out: *mut f64,
) -> PlapStatus {
    guard(|| {
        let o = unsafe { self::out(out, "out") }?;
        *o = sigma_eta(&profile(kernel, support)?, p, dim)?;
        Ok(())
    })
}

/// Samples `n` points uniformly on the box `[lower, upper]` of dimension
/// `dim`, with the `n_labels` labeled points first. `label_positions` holds
/// `n_labels * dim` coordinates row by row.
///
/// # Safety
/// Array arguments must point to at least the stated number of elements and
/// `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn plap_cloud_sample(
    dim: usize,
    lower: *const f64,
    upper: *const f64,
    label_positions: *const f64,
    label_values: *const f64,
    n_labels: usize,
    n: usize,
    seed: u64,
    out: *mut *mut PlapCloud,
) -> PlapStatus {
    guard(|| {
        let slot = unsafe { self::out(out, "out") }?;
        let lower = unsafe { slice(lower, dim, "lower") }?;
        let upper = unsafe { slice(upper, dim, "upper") }?;
        let pos = unsafe { slice(label_positions, n_labels * dim, "label_positions") }?;
        let val = unsafe { slice(label_values, n_labels, "label_values") }?;
        let domain = Domain::uniform(lower.to_vec(), upper.to_vec())?;
        let labeled: Vec<LabeledPoint> = (0..n_labels)
            .map(|i| LabeledPoint::new(pos[i * dim..(i + 1) * dim].to_vec(), val[i]))
            .collect();
        let cloud = sample_cloud(&domain, &labeled, n, seed)?;
        *slot = Box::into_raw(Box::new(PlapCloud(Arc::new(cloud))));
        Ok(())
    })
}

/// # Safety
/// `cloud` must be null or a handle from `plap_cloud_sample` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn plap_cloud_free(cloud: *mut PlapCloud) {
    if !cloud.is_null() {
        drop(unsafe { Box::from_raw(cloud) });
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn plap_cloud_len(cloud: *const PlapCloud) -> usize {
    unsafe { cloud.as_ref() }.map_or(0, |c| c.0.len())
}

/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn plap_cloud_dim(cloud: *const PlapCloud) -> usize {
    unsafe { cloud.as_ref() }.map_or(0, |c| c.0.dim())
}

/// Copies the `len * dim` coordinates, row by row, into `coords`.
///
/// # Safety
/// `cloud` must be a live handle and `coords` must have room for `capacity`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn plap_cloud_coords(cloud: *const PlapCloud, coords: *mut f64, capacity: usize) -> PlapStatus {
    guard(|| {
        let c = &unsafe { handle(cloud, "cloud") }?.0;
        let src = c.coords();
        if capacity < src.len() {
            return Err(Fail(
                PlapStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", src.len()),
            ));
        }
        if coords.is_null() {
            return Err(null("coords"));
        }
        unsafe { ptr::copy_nonoverlapping(src.as_ptr(), coords, src.len()) };
        Ok(())
    })
}

/// Smallest ε for which the graph on `cloud` is connected.
///
/// # Safety
/// `cloud` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plap_connectivity_radius(
    cloud: *const PlapCloud,
    kernel: PlapKernel,
    support: f64,
    out: *mut f64,
) -> PlapStatus {
    guard(|| {
        let c = &unsafe { handle(cloud, "cloud") }?.0;
        let o = unsafe { self::out(out, "out") }?;
        *o = connectivity_radius(c, &profile(kernel, support)?)?;
        Ok(())
    })
}

/// Builds the ε-neighborhood graph. The graph keeps its own reference to the
/// cloud, so the cloud handle may be freed afterwards.
///
/// # Safety
/// `cloud` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn plap_graph_build(
    cloud: *const PlapCloud,
    kernel: PlapKernel,
    support: f64,
    eps: f64,
    out: *mut *mut PlapGraph,
) -> PlapStatus {
    guard(|| {
        let c = &unsafe { handle(cloud, "cloud") }?.0;
        let slot = unsafe { self::out(out, "out") }?;
        let g = build_graph(c.clone(), &profile(kernel, support)?, eps)?;
        *slot = Box::into_raw(Box::new(PlapGraph(g)));
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle from `plap_graph_build` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn plap_graph_free(graph: *mut PlapGraph) {
    if !graph.is_null() {
        drop(unsafe { Box::from_raw(graph) });
    }
}

/// Number of undirected edges, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn plap_graph_num_edges(graph: *const PlapGraph) -> usize {
    unsafe { graph.as_ref() }.map_or(0, |g| g.0.num_edges())
}

/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn plap_graph_is_connected(graph: *const PlapGraph) -> bool {
    unsafe { graph.as_ref() }.is_some_and(|g| is_connected(&g.0))
}

/// Normalized p-Dirichlet energy of `f` (one value per node).
///
/// # Safety
/// `graph` must be a live handle, `f` must hold `len` doubles and `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn plap_dirichlet_energy(
    graph: *const PlapGraph,
    f: *const f64,
    len: usize,
    p: f64,
    out: *mut f64,
) -> PlapStatus {
    guard(|| {
        let g = &unsafe { handle(graph, "graph") }?.0;
        let f = unsafe { slice(f, len, "f") }?;
        let o = unsafe { self::out(out, "out") }?;
        *o = dirichlet_energy(g, f, p)?;
        Ok(())
    })
}

/// Solves the chosen model with the labels of the graph's cloud and writes
/// the node values into `solution`. `options` and `report` may be null.
///
/// # Safety
/// `graph` must be a live handle, `solution` must have room for `capacity`
/// doubles, and non-null `options`/`report` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn plap_solve(
    graph: *const PlapGraph,
    model: PlapModel,
    p: f64,
    q: f64,
    lambda: f64,
    radius_multiplier: f64,
    options: *const PlapSolveOptions,
    solution: *mut f64,
    capacity: usize,
    report: *mut PlapSolveReport,
) -> PlapStatus {
    guard(|| {
        let g = &unsafe { handle(graph, "graph") }?.0;
        if capacity < g.len() {
            return Err(Fail(
                PlapStatus::BufferTooSmall,
                format!("need {} doubles, got {capacity}", g.len()),
            ));
        }
        if solution.is_null() {
            return Err(null("solution"));
        }
        let mut opts = SolveOptions::default();
        if let Some(o) = unsafe { options.as_ref() } {
            opts.max_sweeps = o.max_sweeps;
            opts.rel_energy_tol = o.rel_energy_tol;
            opts.coord_tol = o.coord_tol;
            opts.clip_to_labels = o.clip_to_labels;
        }
        let model = match model {
            PlapModel::Constrained => Model::Constrained,
            PlapModel::Penalized => Model::Penalized { q, lambda },
            PlapModel::Improved => Model::Improved { radius_multiplier },
        };
        let r = solve_model(g, model, p, &opts)?;
        let values = r.solution.values();
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), solution, values.len()) };
        if let Some(rep) = unsafe { report.as_mut() } {
            *rep = PlapSolveReport {
                final_energy: r.final_energy,
                sweeps_used: r.sweeps_used,
                converged: r.converged,
                graph_connected: r.graph_connected,
            };
        }
        Ok(())
    })
}
