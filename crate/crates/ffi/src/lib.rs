//! C ABI over the `dpmm` library.
//!
//! Every fallible function returns a [`DpmmStatus`]; on failure the message is
//! available from [`dpmm_last_error_message`] on the same thread. Models are
//! opaque handles created by [`dpmm_model_load`] and released with
//! [`dpmm_model_free`]. Array arguments are pointer plus length pairs; output
//! buffers must be caller-allocated with the stated length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use dpmm::data::MultimodalSample;
use dpmm::math::{self, BetaParams, DiagGaussian};
use dpmm::metrics::{self, ScoredSet};
use dpmm::model::Model;
use dpmm::rng::{self, Stream};
use dpmm::{checkpoint, stick, DpmmError};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpmmStatus {
    Ok = 0,
    InvalidArgument = 1,
    DimensionMismatch = 2,
    DegenerateModality = 3,
    DegenerateInput = 4,
    InvalidSample = 5,
    UndefinedMetric = 6,
    CiFailure = 7,
    Divergence = 8,
    SchemaMismatch = 9,
    Config = 10,
    Parse = 11,
    Io = 12,
    NullPointer = 13,
    Panic = 14,
}

/// Opaque trained model.
pub struct DpmmModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &DpmmError) -> DpmmStatus {
    match e {
        DpmmError::InvalidArgument(_) => DpmmStatus::InvalidArgument,
        DpmmError::DimensionMismatch { .. } => DpmmStatus::DimensionMismatch,
        DpmmError::DegenerateModality { .. } => DpmmStatus::DegenerateModality,
        DpmmError::DegenerateInput(_) => DpmmStatus::DegenerateInput,
        DpmmError::InvalidSample(_) => DpmmStatus::InvalidSample,
        DpmmError::UndefinedMetric(_) => DpmmStatus::UndefinedMetric,
        DpmmError::CiFailure(_) => DpmmStatus::CiFailure,
        DpmmError::Divergence { .. } => DpmmStatus::Divergence,
        DpmmError::SchemaMismatch(_) => DpmmStatus::SchemaMismatch,
        DpmmError::Config(_) => DpmmStatus::Config,
        DpmmError::Parse { .. } => DpmmStatus::Parse,
        DpmmError::Io(_) => DpmmStatus::Io,
    }
}

enum Failure {
    Lib(DpmmError),
    Null(&'static str),
}

impl From<DpmmError> for Failure {
    fn from(e: DpmmError) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DpmmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DpmmStatus::Ok
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            DpmmStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            DpmmStatus::Panic
        }
    }
}

/// Borrowed slice from a C array; a zero length accepts a null pointer.
unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn write_all(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Failure> {
    if out_len != values.len() {
        return Err(DpmmError::DimensionMismatch {
            expected: values.len(),
            got: out_len,
        }
        .into());
    }
    if values.is_empty() {
        return Ok(());
    }
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    slice::from_raw_parts_mut(out, out_len).copy_from_slice(values);
    Ok(())
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dpmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_log_sum_exp(values: *const f64, len: usize, out: *mut f64) -> DpmmStatus {
    guard(|| {
        *output(out, "out")? = math::log_sum_exp(input(values, len, "values")?)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_digamma(x: f64, out: *mut f64) -> DpmmStatus {
    guard(|| {
        *output(out, "out")? = math::digamma(x)?;
        Ok(())
    })
}

/// `KL(Beta(qa, qb) ‖ Beta(pa, pb))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_kl_beta(qa: f64, qb: f64, pa: f64, pb: f64, out: *mut f64) -> DpmmStatus {
    guard(|| {
        *output(out, "out")? = math::kl_beta(BetaParams::new(qa, qb)?, BetaParams::new(pa, pb)?)?;
        Ok(())
    })
}

/// KL divergence between diagonal Gaussians given as means and log-variances of length `dim`.
///
/// # Safety
/// The four input arrays must hold `dim` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_kl_gauss_diag(
    q_mu: *const f64,
    q_log_var: *const f64,
    p_mu: *const f64,
    p_log_var: *const f64,
    dim: usize,
    out: *mut f64,
) -> DpmmStatus {
    guard(|| {
        let q = DiagGaussian::new(input(q_mu, dim, "q_mu")?.to_vec(), input(q_log_var, dim, "q_log_var")?.to_vec())?;
        let p = DiagGaussian::new(input(p_mu, dim, "p_mu")?.to_vec(), input(p_log_var, dim, "p_log_var")?.to_vec())?;
        *output(out, "out")? = math::kl_gauss_diag(&q, &p)?;
        Ok(())
    })
}

/// Stick-breaking weights from `len` fractions in (0, 1]; pass 1 last for a truncated simplex.
///
/// # Safety
/// `sticks` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpmm_weights_from_sticks(sticks: *const f64, len: usize, out: *mut f64) -> DpmmStatus {
    guard(|| {
        let w = stick::weights_from_sticks(input(sticks, len, "sticks")?)?;
        write_all(out, len, &w.0)
    })
}

/// One seeded draw of the `M·K` weights from the stick-breaking prior.
///
/// # Safety
/// `out` must hold `num_modalities * truncation` doubles.
#[no_mangle]
pub unsafe extern "C" fn dpmm_sample_prior_weights(
    eta: f64,
    num_modalities: usize,
    truncation: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> DpmmStatus {
    guard(|| {
        let w = stick::sample_prior_weights(eta, num_modalities, truncation, seed)?;
        write_all(out, out_len, &w.0)
    })
}

/// Area under the ROC curve; labels must be 0 or 1.
///
/// # Safety
/// `scores` and `labels` must hold `len` entries; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_auroc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> DpmmStatus {
    guard(|| {
        let s = input(scores, len, "scores")?.to_vec();
        if len > 0 && labels.is_null() {
            return Err(Failure::Null("labels"));
        }
        let l = if len == 0 { Vec::new() } else { slice::from_raw_parts(labels, len).to_vec() };
        *output(out, "out")? = metrics::auroc(&ScoredSet::new(s, l)?)?;
        Ok(())
    })
}

/// Loads a checkpoint file written by the `dpmm` tool.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
/// The handle must be released with [`dpmm_model_free`].
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_load(path: *const c_char, out: *mut *mut DpmmModel) -> DpmmStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let slot = output(out, "out")?;
        *slot = ptr::null_mut();
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| DpmmError::InvalidArgument("path is not valid UTF-8".into()))?;
        let model = checkpoint::load(Path::new(p))?;
        *slot = Box::into_raw(Box::new(DpmmModel { inner: model }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from [`dpmm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_free(model: *mut DpmmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of modalities, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_num_modalities(model: *const DpmmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.num_modalities())
}

/// Input dimension of modality `m`, or 0 when out of range.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_input_dim(model: *const DpmmModel, m: usize) -> usize {
    model
        .as_ref()
        .and_then(|h| h.inner.input_dims.get(m).copied())
        .unwrap_or(0)
}

/// Latent embedding size, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_latent_dim(model: *const DpmmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.latent_dim())
}

/// Embeds the features of modality `m`.
///
/// # Safety
/// `x` must hold `x_len` doubles and `out` `out_len` doubles (the latent size).
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_encode(
    model: *const DpmmModel,
    m: usize,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DpmmStatus {
    guard(|| {
        let h = model.as_ref().ok_or(Failure::Null("model"))?;
        let z = h.inner.encode(input(x, x_len, "x")?, m)?;
        write_all(out, out_len, &z)
    })
}

/// Probability of the positive class for one sample.
///
/// `features[m]` points to the features of modality `m` (length given by
/// [`dpmm_model_input_dim`]) or is null when that modality is missing. Missing
/// modalities are imputed with draws seeded by `seed`.
///
/// # Safety
/// `features` must hold one pointer per modality, each null or pointing to
/// the modality's input dimension worth of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dpmm_model_predict(
    model: *const DpmmModel,
    features: *const *const f64,
    num_modalities: usize,
    seed: u64,
    out: *mut f64,
) -> DpmmStatus {
    guard(|| {
        let h = model.as_ref().ok_or(Failure::Null("model"))?;
        let m_count = h.inner.num_modalities();
        if num_modalities != m_count {
            return Err(DpmmError::SchemaMismatch(format!(
                "got {num_modalities} modalities, model expects {m_count}"
            ))
            .into());
        }
        if features.is_null() {
            return Err(Failure::Null("features"));
        }
        let ptrs = slice::from_raw_parts(features, m_count);
        let feats: Vec<Option<Vec<f64>>> = ptrs
            .iter()
            .zip(&h.inner.input_dims)
            .map(|(p, &d)| (!p.is_null()).then(|| slice::from_raw_parts(*p, d).to_vec()))
            .collect();
        let sample = MultimodalSample {
            mask: feats.iter().map(Option::is_some).collect(),
            features: feats,
            label: 0,
        };
        let mut r = rng::stream(seed, Stream::Eval);
        let (z, _) = h.inner.assemble_embeddings(&sample, &mut r)?;
        *output(out, "out")? = h.inner.predict(&z)?;
        Ok(())
    })
}
