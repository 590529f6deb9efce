//! C ABI over `grouprec`.
//!
//! Every fallible function returns a [`GrecStatus`] and writes results through
//! out-pointers. On failure a message is available from [`grec_last_error`]
//! on the calling thread. Objects are opaque handles released with their
//! matching `_free` function; passing null to a `_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use grouprec::aggregation::{weights_for, GroupInput, Strategy, Weighting};
use grouprec::data::{load_ratings, LoadOptions, RatingsDataset};
use grouprec::eval::{evaluate, EvalOptions, MetricsReport};
use grouprec::groups::{generate_groups, GroupsFile};
use grouprec::model::{train, ModelParams, ModelType, TrainConfig};
use grouprec::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrecStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    EmptyDataset = 5,
    Shape = 6,
    IndexOutOfRange = 7,
    NonFinite = 8,
    EmptyGroup = 9,
    InvalidWeights = 10,
    Checkpoint = 11,
    GroupsFile = 12,
    FingerprintMismatch = 13,
    Protocol = 14,
    Panic = 15,
}

pub const GREC_MODEL_GMF: u32 = 0;
pub const GREC_MODEL_MLP: u32 = 1;

pub const GREC_STRATEGY_IPA: u32 = 0;
pub const GREC_STRATEGY_AVERAGE: u32 = 1;
pub const GREC_STRATEGY_EXPERTISE: u32 = 2;
pub const GREC_STRATEGY_SOFTMAX: u32 = 3;

pub const GREC_WEIGHTING_AVERAGE: u32 = 0;
pub const GREC_WEIGHTING_EXPERTISE: u32 = 1;
pub const GREC_WEIGHTING_SOFTMAX: u32 = 2;

/// Ratings with a train/test split.
pub struct GrecDataset(RatingsDataset);

/// A trained or loaded GMF/MLP model.
pub struct GrecModel(ModelParams);

/// A set of synthesized groups tied to one dataset split.
pub struct GrecGroups(GroupsFile);

/// Per-size metric summaries from one evaluation.
pub struct GrecReport(MetricsReport);

/// Training hyperparameters. `mlp_layers` may be null when `mlp_layers_len` is 0.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GrecTrainConfig {
    pub factors: usize,
    pub mlp_layers: *const usize,
    pub mlp_layers_len: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GrecReportRow {
    pub model: u32,
    pub strategy: u32,
    pub size: usize,
    pub n_groups: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub max_mean: f64,
    pub max_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
}

struct Failure(GrecStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => GrecStatus::Io,
            Error::Parse { .. } => GrecStatus::Parse,
            Error::EmptyDataset => GrecStatus::EmptyDataset,
            Error::Shape(_) => GrecStatus::Shape,
            Error::IndexOutOfRange { .. } => GrecStatus::IndexOutOfRange,
            Error::NonFinite(_) => GrecStatus::NonFinite,
            Error::EmptyGroup => GrecStatus::EmptyGroup,
            Error::InvalidWeights(_) => GrecStatus::InvalidWeights,
            Error::Checkpoint(_) => GrecStatus::Checkpoint,
            Error::GroupsFile(_) => GrecStatus::GroupsFile,
            Error::FingerprintMismatch { .. } => GrecStatus::FingerprintMismatch,
            Error::Protocol(_) => GrecStatus::Protocol,
            Error::Config(_) => GrecStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GrecStatus::NullArgument, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(GrecStatus::InvalidArgument, message.into())
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> GrecStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            GrecStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal panic: {message}"));
            GrecStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn model_type(code: u32) -> Result<ModelType, Failure> {
    match code {
        GREC_MODEL_GMF => Ok(ModelType::Gmf),
        GREC_MODEL_MLP => Ok(ModelType::Mlp),
        _ => Err(invalid(format!("unknown model type {code}"))),
    }
}

fn model_code(t: ModelType) -> u32 {
    match t {
        ModelType::Gmf => GREC_MODEL_GMF,
        ModelType::Mlp => GREC_MODEL_MLP,
    }
}

fn strategy(code: u32) -> Result<Strategy, Failure> {
    match code {
        GREC_STRATEGY_IPA => Ok(Strategy::Ipa),
        GREC_STRATEGY_AVERAGE => Ok(Strategy::Gpa(Weighting::Average)),
        GREC_STRATEGY_EXPERTISE => Ok(Strategy::Gpa(Weighting::Expertise)),
        GREC_STRATEGY_SOFTMAX => Ok(Strategy::Gpa(Weighting::Softmax)),
        _ => Err(invalid(format!("unknown strategy {code}"))),
    }
}

fn strategy_code(s: Strategy) -> u32 {
    match s {
        Strategy::Ipa => GREC_STRATEGY_IPA,
        Strategy::Gpa(Weighting::Average) => GREC_STRATEGY_AVERAGE,
        Strategy::Gpa(Weighting::Expertise) => GREC_STRATEGY_EXPERTISE,
        Strategy::Gpa(Weighting::Softmax) => GREC_STRATEGY_SOFTMAX,
    }
}

fn weighting(code: u32) -> Result<Weighting, Failure> {
    match code {
        GREC_WEIGHTING_AVERAGE => Ok(Weighting::Average),
        GREC_WEIGHTING_EXPERTISE => Ok(Weighting::Expertise),
        GREC_WEIGHTING_SOFTMAX => Ok(Weighting::Softmax),
        _ => Err(invalid(format!("unknown weighting {code}"))),
    }
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn grec_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a delimited `user item rating` file. `delimiter` is a Unicode scalar;
/// any whitespace character splits on runs of whitespace.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_dataset_load(
    path: *const c_char,
    delimiter: u32,
    has_header: bool,
    out_dataset: *mut *mut GrecDataset,
) -> GrecStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_dataset, "out_dataset")?;
        let delimiter = char::from_u32(delimiter)
            .ok_or_else(|| invalid("delimiter is not a valid character"))?;
        let ds = load_ratings(
            path,
            &LoadOptions {
                delimiter,
                has_header,
            },
        )?;
        *slot = boxed(GrecDataset(ds));
        Ok(())
    })
}

/// Returns a new dataset with a per-user test split. The input is unchanged.
///
/// # Safety
/// `dataset` must be a live handle and `out_dataset` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_dataset_split(
    dataset: *const GrecDataset,
    test_fraction: f64,
    seed: u64,
    out_dataset: *mut *mut GrecDataset,
) -> GrecStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let slot = out(out_dataset, "out_dataset")?;
        *slot = boxed(GrecDataset(ds.0.split(test_fraction, seed)?));
        Ok(())
    })
}

/// Any of the out-pointers may be null.
///
/// # Safety
/// `dataset` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn grec_dataset_shape(
    dataset: *const GrecDataset,
    out_users: *mut usize,
    out_items: *mut usize,
    out_ratings: *mut usize,
) -> GrecStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        for (p, v) in [
            (out_users, ds.users()),
            (out_items, ds.items()),
            (out_ratings, ds.ratings().len()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies per-user train rating counts into `out_counts`, which must hold
/// exactly as many entries as the dataset has users.
///
/// # Safety
/// `out_counts` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn grec_dataset_train_counts(
    dataset: *const GrecDataset,
    out_counts: *mut usize,
    len: usize,
) -> GrecStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let counts = ds.train_counts();
        if len != counts.len() {
            return Err(invalid(format!(
                "buffer holds {len} counts, dataset has {} users",
                counts.len()
            )));
        }
        slice_mut(out_counts, len, "out_counts")?.copy_from_slice(&counts);
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn grec_dataset_free(dataset: *mut GrecDataset) {
    free(dataset)
}

static DEFAULT_LAYERS: [usize; 3] = [32, 16, 8];

#[no_mangle]
pub extern "C" fn grec_train_config_default() -> GrecTrainConfig {
    let d = TrainConfig::default();
    debug_assert_eq!(d.mlp_layers, DEFAULT_LAYERS);
    GrecTrainConfig {
        factors: d.factors,
        mlp_layers: DEFAULT_LAYERS.as_ptr(),
        mlp_layers_len: DEFAULT_LAYERS.len(),
        learning_rate: d.learning_rate,
        batch_size: d.batch_size,
        epochs: d.epochs,
        seed: d.seed,
    }
}

/// Trains on the train partition of `dataset`.
///
/// # Safety
/// Handles must be live; `config` must be valid with `mlp_layers_len` readable entries.
#[no_mangle]
pub unsafe extern "C" fn grec_model_train(
    dataset: *const GrecDataset,
    model_type_code: u32,
    config: *const GrecTrainConfig,
    out_model: *mut *mut GrecModel,
) -> GrecStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let c = handle(config, "config")?;
        let slot = out(out_model, "out_model")?;
        let cfg = TrainConfig {
            factors: c.factors,
            mlp_layers: slice(c.mlp_layers, c.mlp_layers_len, "config.mlp_layers")?.to_vec(),
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            epochs: c.epochs,
            seed: c.seed,
            ..TrainConfig::default()
        };
        let trained = train(ds, model_type(model_type_code)?, &cfg)?;
        *slot = boxed(GrecModel(trained.params));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_model_load(
    path: *const c_char,
    out_model: *mut *mut GrecModel,
) -> GrecStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_model, "out_model")?;
        *slot = boxed(GrecModel(ModelParams::load_checkpoint(path)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grec_model_save(
    model: *const GrecModel,
    path: *const c_char,
) -> GrecStatus {
    guard(|| {
        let model = &handle(model, "model")?.0;
        model.save_checkpoint(string(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; non-null out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn grec_model_shape(
    model: *const GrecModel,
    out_model_type: *mut u32,
    out_users: *mut usize,
    out_items: *mut usize,
    out_factors: *mut usize,
) -> GrecStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        if let Some(p) = out_model_type.as_mut() {
            *p = model_code(m.model_type());
        }
        for (p, v) in [
            (out_users, m.users()),
            (out_items, m.items()),
            (out_factors, m.factors()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Clamped individual prediction.
///
/// # Safety
/// `model` must be a live handle and `out_rating` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_model_predict(
    model: *const GrecModel,
    user: u32,
    item: u32,
    out_rating: *mut f64,
) -> GrecStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let slot = out(out_rating, "out_rating")?;
        *slot = m.predict(user, item)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn grec_model_free(model: *mut GrecModel) {
    free(model)
}

/// Aggregation weights for `members`, written in the same order as `members`.
/// `counts` holds train rating counts indexed by user and may be empty for
/// the average weighting.
///
/// # Safety
/// `members` and `out_weights` must hold `n_members` values; `counts` must hold `n_counts`.
#[no_mangle]
pub unsafe extern "C" fn grec_group_weights(
    weighting_code: u32,
    members: *const u32,
    n_members: usize,
    counts: *const usize,
    n_counts: usize,
    out_weights: *mut f64,
) -> GrecStatus {
    guard(|| {
        let members = slice(members, n_members, "members")?;
        let counts = slice(counts, n_counts, "counts")?;
        let dst = slice_mut(out_weights, n_members, "out_weights")?;
        let w = weights_for(weighting(weighting_code)?, members, counts)?;
        let entries = w.entries();
        for (slot, user) in dst.iter_mut().zip(members) {
            let k = entries
                .binary_search_by_key(user, |(u, _)| *u)
                .map_err(|_| invalid(format!("member {user} missing from weights")))?;
            *slot = entries[k].1;
        }
        Ok(())
    })
}

/// Clamped group prediction of `item` for `members` under `strategy_code`.
///
/// # Safety
/// `members` must hold `n_members` values, `counts` `n_counts`; `out_rating` must be valid.
#[no_mangle]
pub unsafe extern "C" fn grec_group_predict(
    model: *const GrecModel,
    strategy_code: u32,
    members: *const u32,
    n_members: usize,
    counts: *const usize,
    n_counts: usize,
    item: u32,
    out_rating: *mut f64,
) -> GrecStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let members = slice(members, n_members, "members")?;
        let counts = slice(counts, n_counts, "counts")?;
        let slot = out(out_rating, "out_rating")?;
        *slot = GroupInput::new(strategy(strategy_code)?, members, counts)?.predict(m, item)?;
        Ok(())
    })
}

/// Synthesizes up to `per_size` groups for each size. Sizes that run out of
/// attempts yield fewer groups; compare [`grec_groups_len`] with the request.
///
/// # Safety
/// `dataset` must be a live handle, `sizes` must hold `n_sizes` values.
#[no_mangle]
pub unsafe extern "C" fn grec_groups_generate(
    dataset: *const GrecDataset,
    sizes: *const usize,
    n_sizes: usize,
    per_size: usize,
    seed: u64,
    max_attempts: usize,
    out_groups: *mut *mut GrecGroups,
) -> GrecStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.0;
        let sizes = slice(sizes, n_sizes, "sizes")?;
        let slot = out(out_groups, "out_groups")?;
        let generated = generate_groups(ds, sizes, per_size, seed, max_attempts)?;
        *slot = boxed(GrecGroups(GroupsFile {
            dataset: ds.fingerprint(),
            config: None,
            groups: generated.groups,
        }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out_groups` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_groups_load(
    path: *const c_char,
    out_groups: *mut *mut GrecGroups,
) -> GrecStatus {
    guard(|| {
        let path = string(path, "path")?;
        let slot = out(out_groups, "out_groups")?;
        *slot = boxed(GrecGroups(GroupsFile::load(path)?));
        Ok(())
    })
}

/// # Safety
/// `groups` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grec_groups_save(
    groups: *const GrecGroups,
    path: *const c_char,
) -> GrecStatus {
    guard(|| {
        let g = &handle(groups, "groups")?.0;
        g.save(string(path, "path")?)?;
        Ok(())
    })
}

/// Number of groups, or 0 for a null handle.
///
/// # Safety
/// `groups` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn grec_groups_len(groups: *const GrecGroups) -> usize {
    groups.as_ref().map_or(0, |g| g.0.groups.len())
}

/// # Safety
/// `groups` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn grec_groups_free(groups: *mut GrecGroups) {
    free(groups)
}

/// Scores every group under one strategy. `threads` of 0 uses the global pool.
///
/// # Safety
/// Handles must be live and `out_report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_evaluate(
    model: *const GrecModel,
    dataset: *const GrecDataset,
    groups: *const GrecGroups,
    strategy_code: u32,
    ndcg_n: usize,
    threads: usize,
    out_report: *mut *mut GrecReport,
) -> GrecStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let ds = &handle(dataset, "dataset")?.0;
        let g = &handle(groups, "groups")?.0;
        let slot = out(out_report, "out_report")?;
        let options = EvalOptions {
            ndcg_n,
            threads: (threads > 0).then_some(threads),
            ..EvalOptions::default()
        };
        *slot = boxed(GrecReport(evaluate(
            m,
            ds,
            g,
            strategy(strategy_code)?,
            &options,
        )?));
        Ok(())
    })
}

/// Number of rows (one per group size), or 0 for a null handle.
///
/// # Safety
/// `report` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn grec_report_len(report: *const GrecReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.rows.len())
}

/// # Safety
/// `report` must be a live handle and `out_row` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn grec_report_row(
    report: *const GrecReport,
    index: usize,
    out_row: *mut GrecReportRow,
) -> GrecStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let slot = out(out_row, "out_row")?;
        let row = r.rows.get(index).ok_or_else(|| {
            Failure(
                GrecStatus::IndexOutOfRange,
                format!("row {index} out of range (len {})", r.rows.len()),
            )
        })?;
        *slot = GrecReportRow {
            model: model_code(row.model),
            strategy: strategy_code(row.strategy),
            size: row.size,
            n_groups: row.n_groups,
            mae_mean: row.mae.mean,
            mae_std: row.mae.std,
            mse_mean: row.mse.mean,
            mse_std: row.mse.std,
            max_mean: row.max.mean,
            max_std: row.max.std,
            ndcg_mean: row.ndcg.mean,
            ndcg_std: row.ndcg.std,
        };
        Ok(())
    })
}

/// Writes the report as tab-separated values.
///
/// # Safety
/// `report` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn grec_report_write_tsv(
    report: *const GrecReport,
    path: *const c_char,
) -> GrecStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let path = string(path, "path")?;
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        r.write_tsv(std::io::BufWriter::new(file), None)
            .map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn grec_report_free(report: *mut GrecReport) {
    free(report)
}
