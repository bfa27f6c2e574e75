//! C interface to the simulator.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`ArStatus`]; the message of the most recent failure on the
//! calling thread is available through [`ar_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use anneal_range::analysis::branching_fit;
use anneal_range::experiment::{run_point, BathConfig, DeviceSetup};
use anneal_range::gadget::{build_gadget, Gadget};
use anneal_range::ising::SpinConfig;
use anneal_range::schedule::{Device, ScheduleTable};
use anneal_range::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    Numerical = 4,
    Io = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

pub const AR_DEVICE_LOW_NOISE: i32 = 0;
pub const AR_DEVICE_HIGH_NOISE: i32 = 1;

pub const AR_CLASS_START: i32 = 0;
pub const AR_CLASS_TRUE_MIN: i32 = 1;
pub const AR_CLASS_FALSE_MIN: i32 = 2;
pub const AR_CLASS_OTHER: i32 = 3;

pub const AR_STATE_START: i32 = 0;
pub const AR_STATE_TRUE_MIN: i32 = 1;

/// Built gadget at one barrier height.
pub struct ArGadget {
    inner: Gadget,
}

/// Annealing schedule A(s), B(s).
pub struct ArSchedule {
    inner: ScheduleTable,
}

/// Result of a branching-ratio fit.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArFit {
    pub r_false: f64,
    pub kappa: f64,
    pub sigma_r: f64,
    pub sigma_kappa: f64,
    pub rss: f64,
    pub kappa_identifiable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure {
    status: ArStatus,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::OutOfRange { .. } => ArStatus::OutOfRange,
            Error::NoConvergence { .. }
            | Error::NoBracket { .. }
            | Error::Dynamics(_)
            | Error::Fit(_)
            | Error::Analysis(_) => ArStatus::Numerical,
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => ArStatus::Io,
            _ => ArStatus::InvalidArgument,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

fn fail(status: ArStatus, message: impl Into<String>) -> Failure {
    Failure {
        status,
        message: message.into(),
    }
}

fn call(f: impl FnOnce() -> Result<(), Failure>) -> ArStatus {
    let (status, message) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (ArStatus::Ok, String::new()),
        Ok(Err(e)) => (e.status, e.message),
        Err(_) => (ArStatus::Internal, "internal panic".to_string()),
    };
    LAST_ERROR.with(|m| *m.borrow_mut() = message);
    status
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(ArStatus::NullPointer, format!("{what} is null")))
}

unsafe fn spins_from<'a>(spins: *const i8, len: usize) -> Result<SpinConfig, Failure> {
    if spins.is_null() {
        return Err(fail(ArStatus::NullPointer, "spins is null"));
    }
    let slice = std::slice::from_raw_parts(spins, len);
    Ok(SpinConfig::new(slice.to_vec())?)
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(ArStatus::NullPointer, format!("{what} is null")));
    }
    out.write(value);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `capacity`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to at least `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ar_last_error(buf: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|m| {
        let msg = m.borrow();
        if !buf.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            buf.add(n).write(0);
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds and validates the gadget at barrier height `j_t` in [0, 1].
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_new(j_t: f64, out: *mut *mut ArGadget) -> ArStatus {
    call(|| {
        if out.is_null() {
            return Err(fail(ArStatus::NullPointer, "out is null"));
        }
        let inner = build_gadget(j_t)?;
        out.write(Box::into_raw(Box::new(ArGadget { inner })));
        Ok(())
    })
}

/// Releases a gadget handle; null is ignored.
///
/// # Safety
/// `gadget` must come from [`ar_gadget_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_free(gadget: *mut ArGadget) {
    if !gadget.is_null() {
        drop(Box::from_raw(gadget));
    }
}

/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_n_qubits(gadget: *const ArGadget, out: *mut usize) -> ArStatus {
    call(|| {
        let g = deref(gadget, "gadget")?;
        write_out(out, g.inner.problem.n_qubits(), "out")
    })
}

/// Energy of a spin configuration given as `len` values of +1/-1.
///
/// # Safety
/// `spins` must point to `len` readable values; other pointers null or valid.
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_energy(gadget: *const ArGadget, spins: *const i8, len: usize, out: *mut f64) -> ArStatus {
    call(|| {
        let g = deref(gadget, "gadget")?;
        let cfg = spins_from(spins, len)?;
        write_out(out, g.inner.problem.energy(&cfg)?, "out")
    })
}

/// Outcome class (`AR_CLASS_*`) of a spin configuration.
///
/// # Safety
/// As for [`ar_gadget_energy`].
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_classify(gadget: *const ArGadget, spins: *const i8, len: usize, out: *mut i32) -> ArStatus {
    call(|| {
        let g = deref(gadget, "gadget")?;
        let cfg = spins_from(spins, len)?;
        if cfg.len() != g.inner.problem.n_qubits() {
            return Err(Error::LengthMismatch {
                expected: g.inner.problem.n_qubits(),
                actual: cfg.len(),
            }
            .into());
        }
        write_out(out, g.inner.spec.classify(&cfg).index() as i32, "out")
    })
}

/// Writes the start (`AR_STATE_START`) or true-minimum (`AR_STATE_TRUE_MIN`)
/// state as a NUL-terminated bit string, qubit 0 first, '0' for spin +1.
///
/// # Safety
/// `buf` must point to `capacity` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ar_gadget_state_bits(gadget: *const ArGadget, which: i32, buf: *mut c_char, capacity: usize) -> ArStatus {
    call(|| {
        let g = deref(gadget, "gadget")?;
        let state = match which {
            AR_STATE_START => &g.inner.spec.start_state,
            AR_STATE_TRUE_MIN => &g.inner.spec.true_min,
            _ => return Err(fail(ArStatus::InvalidArgument, format!("unknown state selector {which}"))),
        };
        if buf.is_null() {
            return Err(fail(ArStatus::NullPointer, "buf is null"));
        }
        let bits = CString::new(state.to_bits()).expect("bit strings have no NUL");
        let bytes = bits.as_bytes_with_nul();
        if capacity < bytes.len() {
            return Err(fail(
                ArStatus::BufferTooSmall,
                format!("need {} bytes, got {capacity}", bytes.len()),
            ));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, bytes.len());
        Ok(())
    })
}

/// Synthetic schedule of `AR_DEVICE_LOW_NOISE` or `AR_DEVICE_HIGH_NOISE`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ar_schedule_synthetic(device: i32, out: *mut *mut ArSchedule) -> ArStatus {
    call(|| {
        let device = match device {
            AR_DEVICE_LOW_NOISE => Device::LowNoise,
            AR_DEVICE_HIGH_NOISE => Device::HighNoise,
            _ => return Err(fail(ArStatus::InvalidArgument, format!("unknown device {device}"))),
        };
        if out.is_null() {
            return Err(fail(ArStatus::NullPointer, "out is null"));
        }
        let inner = ScheduleTable::synthetic(device);
        out.write(Box::into_raw(Box::new(ArSchedule { inner })));
        Ok(())
    })
}

/// Loads a schedule CSV with columns `s,A_GHz,B_GHz`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as for [`ar_schedule_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn ar_schedule_load(path: *const c_char, out: *mut *mut ArSchedule) -> ArStatus {
    call(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(ArStatus::NullPointer, "path or out is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(ArStatus::InvalidArgument, "path is not UTF-8"))?;
        let inner = ScheduleTable::load(Path::new(path))?;
        out.write(Box::into_raw(Box::new(ArSchedule { inner })));
        Ok(())
    })
}

/// Releases a schedule handle; null is ignored.
///
/// # Safety
/// `schedule` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ar_schedule_free(schedule: *mut ArSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// A(s) and B(s) in GHz.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ar_schedule_ab(schedule: *const ArSchedule, s: f64, a_out: *mut f64, b_out: *mut f64) -> ArStatus {
    call(|| {
        let sch = deref(schedule, "schedule")?;
        let (a, b) = sch.inner.ab(s)?;
        write_out(a_out, a, "a_out")?;
        write_out(b_out, b, "b_out")
    })
}

/// Γ(s) = A(s)/B(s).
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ar_schedule_gamma(schedule: *const ArSchedule, s: f64, out: *mut f64) -> ArStatus {
    call(|| {
        let sch = deref(schedule, "schedule")?;
        write_out(out, sch.inner.gamma(s)?, "out")
    })
}

/// Runs one reverse-anneal point with default bath settings and coupling
/// `eta`, writing counts for Start, TrueMin, FalseMin and Other into
/// `counts_out[0..4]`.
///
/// # Safety
/// `counts_out` must point to 4 writable values; handles null or valid.
#[no_mangle]
pub unsafe extern "C" fn ar_run_point(
    schedule: *const ArSchedule,
    eta: f64,
    j_t: f64,
    s_star: f64,
    tau_us: f64,
    shots: u64,
    seed: u64,
    counts_out: *mut u64,
) -> ArStatus {
    call(|| {
        let sch = deref(schedule, "schedule")?;
        if counts_out.is_null() {
            return Err(fail(ArStatus::NullPointer, "counts_out is null"));
        }
        let cfg = BathConfig::default();
        let setup = DeviceSetup {
            label: sch.inner.label().to_string(),
            schedule: sch.inner.clone(),
            bath: cfg.bath(eta)?,
        };
        let record = run_point(&setup, &cfg.evolve_options()?, j_t, s_star, tau_us, shots, seed)?;
        std::slice::from_raw_parts_mut(counts_out, 4).copy_from_slice(&record.counts);
        Ok(())
    })
}

/// Fits `P_false(τ) = 1 - (1 - R) exp(-κ τ)` to `n` points.
///
/// # Safety
/// `tau` and `p_false` must point to `n` readable values; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ar_branching_fit(tau: *const f64, p_false: *const f64, n: usize, out: *mut ArFit) -> ArStatus {
    call(|| {
        if tau.is_null() || p_false.is_null() {
            return Err(fail(ArStatus::NullPointer, "input arrays are null"));
        }
        let taus = std::slice::from_raw_parts(tau, n);
        let ps = std::slice::from_raw_parts(p_false, n);
        let points: Vec<(f64, f64)> = taus.iter().copied().zip(ps.iter().copied()).collect();
        let fit = branching_fit(&points)?;
        write_out(
            out,
            ArFit {
                r_false: fit.r_false,
                kappa: fit.kappa,
                sigma_r: fit.sigma_r(),
                sigma_kappa: fit.sigma_kappa(),
                rss: fit.rss,
                kappa_identifiable: fit.kappa_identifiable,
            },
            "out",
        )
    })
}
