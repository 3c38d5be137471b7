//! C ABI over `hsa-core`.
//!
//! Schemes live behind an opaque `HsaScheme` handle. Every call returns an
//! `HsaStatus`; on failure `hsa_last_error` holds a message for the calling
//! thread. Ids are 0-based; arrays are row-major `uint64_t`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hsa_core::cli::verify_example;
use hsa_core::netsim::encode_all;
use hsa_core::protocol::{relay_aggregate, server_decode, LocalModel};
use hsa_core::vectors::ExampleVectors;
use hsa_core::{audit, HsaError, Scheme, SchemeParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParams = 2,
    ShapeMismatch = 3,
    ConstructionFailed = 4,
    InsufficientRelays = 5,
    OutOfRange = 6,
    VerificationFailed = 7,
    Internal = 8,
}

/// Opaque scheme handle.
pub struct HsaScheme {
    inner: Scheme,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &HsaError) -> HsaStatus {
    match err {
        HsaError::InvalidParams(_) | HsaError::VectorFile(_) | HsaError::Json(_) | HsaError::Io(_) => {
            HsaStatus::InvalidParams
        }
        HsaError::ShapeMismatch(_) | HsaError::LengthMismatch { .. } => HsaStatus::ShapeMismatch,
        HsaError::ConstructionFailed { .. } => HsaStatus::ConstructionFailed,
        HsaError::InsufficientRelays { .. } | HsaError::TooManyMissing { .. } => HsaStatus::InsufficientRelays,
        HsaError::OutOfRange { .. } => HsaStatus::OutOfRange,
        HsaError::TooLarge { .. } | HsaError::BudgetExceeded { .. } => HsaStatus::InvalidParams,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (HsaStatus, String)>) -> HsaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            HsaStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            HsaStatus::Internal
        }
    }
}

fn lift(err: HsaError) -> (HsaStatus, String) {
    (status_of(&err), err.to_string())
}

fn null() -> (HsaStatus, String) {
    (HsaStatus::NullPointer, "null pointer argument".into())
}

unsafe fn scheme_ref<'a>(s: *const HsaScheme) -> Result<&'a Scheme, (HsaStatus, String)> {
    s.as_ref().map(|h| &h.inner).ok_or_else(null)
}

fn publish(scheme: Scheme, out: *mut *mut HsaScheme) {
    unsafe { *out = Box::into_raw(Box::new(HsaScheme { inner: scheme })) };
}

/// Builds an audited scheme. `p = 0` picks the smallest prime above `K(q-1)`.
///
/// # Safety
/// `out` must be a valid pointer; on success it receives a handle to free with `hsa_scheme_free`.
#[no_mangle]
pub unsafe extern "C" fn hsa_scheme_new(
    clients: usize,
    degree: usize,
    stragglers: usize,
    alphabet: u64,
    p: u64,
    model_len: usize,
    seed: u64,
    out: *mut *mut HsaScheme,
) -> HsaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let mut params = SchemeParams::new(clients, degree, stragglers, alphabet, model_len);
        if p != 0 {
            params = params.with_prime(p);
        }
        publish(Scheme::build(&params, seed).map_err(lift)?, out);
        Ok(())
    })
}

/// The bundled K=5, d=3, s=1 example with source symbols drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hsa_scheme_example(seed: u64, out: *mut *mut HsaScheme) -> HsaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let v = ExampleVectors::bundled().map_err(lift)?;
        publish(Scheme::from_example(&v, seed).map_err(lift)?, out);
        Ok(())
    })
}

/// # Safety
/// `scheme` must come from this library and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn hsa_scheme_free(scheme: *mut HsaScheme) {
    if !scheme.is_null() {
        drop(Box::from_raw(scheme));
    }
}

/// Writes `K`, `d`, `s`, `q`, `p` and `L` into `out[0..6]`.
///
/// # Safety
/// `scheme` must be a live handle and `out` must hold 6 values.
#[no_mangle]
pub unsafe extern "C" fn hsa_scheme_params(scheme: *const HsaScheme, out: *mut u64) -> HsaStatus {
    guard(|| {
        let s = scheme_ref(scheme)?;
        if out.is_null() {
            return Err(null());
        }
        let p = s.params();
        let vals = [p.clients as u64, p.degree as u64, p.stragglers as u64, p.alphabet, s.cfg.p(), p.model_len as u64];
        ptr::copy_nonoverlapping(vals.as_ptr(), out, vals.len());
        Ok(())
    })
}

/// Runs one round. `models` is `K x L` row-major with entries below `q`.
/// `relay_ok[m] != 0` means relay `m` reaches the server; null means all do.
/// On success `out_sum[0..L]` holds the integer sum.
///
/// # Safety
/// `models` must hold `K*L` values, `relay_ok` (if not null) `K` bytes, `out_sum` `L` values.
#[no_mangle]
pub unsafe extern "C" fn hsa_aggregate(
    scheme: *const HsaScheme,
    models: *const u64,
    relay_ok: *const u8,
    out_sum: *mut u64,
) -> HsaStatus {
    guard(|| {
        let s = scheme_ref(scheme)?;
        if models.is_null() || out_sum.is_null() {
            return Err(null());
        }
        let (k, l) = (s.cfg.clients(), s.model_len);
        let flat = std::slice::from_raw_parts(models, k * l);
        let locals: Vec<LocalModel> = flat
            .chunks(l)
            .enumerate()
            .map(|(owner, row)| LocalModel::new(owner, row.to_vec(), &s.cfg))
            .collect::<Result<_, _>>()
            .map_err(lift)?;
        let ok = (!relay_ok.is_null()).then(|| std::slice::from_raw_parts(relay_ok, k));
        let messages = encode_all(s, &locals).map_err(lift)?;
        let forwarded: Vec<_> = (0..k)
            .filter(|&m| ok.is_none_or(|o| o[m] != 0))
            .filter_map(|m| relay_aggregate(m, &messages, &s.topology))
            .collect();
        let result = server_decode(&forwarded, &s.code, &s.cfg, l).map_err(lift)?;
        ptr::copy_nonoverlapping(result.integer_sum.as_ptr(), out_sum, l);
        Ok(())
    })
}

/// Largest relay leakage and the server leakage with every relay heard, in symbols.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hsa_audit(
    scheme: *const HsaScheme,
    out_relay_max: *mut usize,
    out_server: *mut usize,
) -> HsaStatus {
    guard(|| {
        let s = scheme_ref(scheme)?;
        if out_relay_max.is_null() || out_server.is_null() {
            return Err(null());
        }
        let relay = audit::relay_leakages(s).map_err(lift)?;
        let all: Vec<usize> = (0..s.cfg.clients()).collect();
        *out_relay_max = relay.into_iter().max().unwrap_or(0);
        *out_server = audit::server_leakage_for(s, &all).map_err(lift)?;
        Ok(())
    })
}

/// Checks the bundled example; `HSA_STATUS_VERIFICATION_FAILED` names the first mismatch.
#[no_mangle]
pub extern "C" fn hsa_verify_example() -> HsaStatus {
    guard(|| {
        let v = ExampleVectors::bundled().map_err(lift)?;
        let report = verify_example(&v).map_err(lift)?;
        match report.first_mismatch() {
            None => Ok(()),
            Some(c) => Err((HsaStatus::VerificationFailed, format!("{}: {}", c.name, c.detail))),
        }
    })
}

/// Copies the calling thread's last error message, NUL-terminated, into `buf`.
/// Returns the message length without the terminator; when that is `>= len`
/// the copy was truncated.
///
/// # Safety
/// `buf` must hold `len` bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn hsa_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn hsa_status_name(status: HsaStatus) -> *const c_char {
    let name: &'static CStr = match status {
        HsaStatus::Ok => c"ok",
        HsaStatus::NullPointer => c"null pointer",
        HsaStatus::InvalidParams => c"invalid parameters",
        HsaStatus::ShapeMismatch => c"shape mismatch",
        HsaStatus::ConstructionFailed => c"construction failed",
        HsaStatus::InsufficientRelays => c"insufficient relays",
        HsaStatus::OutOfRange => c"out of range",
        HsaStatus::VerificationFailed => c"verification failed",
        HsaStatus::Internal => c"internal error",
    };
    name.as_ptr()
}
