//! Append-only JSON-lines collections with an in-memory index.
//!
//! Each collection is one file with one record per line. A record exists once
//! its full line, newline included, has been written. On open, torn or
//! unparsable lines are discarded, as are images without their count record
//! and counts whose image is missing; the files are then rewritten to the
//! surviving records so later appends start on a clean line.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use smartfridge_sim::{DetectedItem, DetectionEvent, SceneItem, SensorReading, Settings};
use tracing::{info, warn};

pub const IMAGES_FILE: &str = "images.jsonl";
pub const COUNTS_FILE: &str = "counts.jsonl";
pub const FRIDGESTATS_FILE: &str = "fridgestats.jsonl";
pub const USERS_FILE: &str = "users.jsonl";
pub const SETTINGS_FILE: &str = "settings.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageRecord {
    pub id: u64,
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub scene: Vec<SceneItem>,
    pub items: Vec<DetectedItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CountRecord {
    pub id: u64,
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub counts: BTreeMap<String, u32>,
    pub image_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FridgeStatRecord {
    pub id: u64,
    pub device_id: String,
    pub timestamp: DateTime<Utc>,
    pub temperature: f64,
    pub humidity: f64,
    pub temperature_target: f64,
    pub humidity_target: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct UserRecord {
    pub username: String,
    pub password_hash: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SettingsRecord {
    pub device_id: String,
    pub temperature_target: f64,
    pub humidity_target: f64,
    pub updated_at: DateTime<Utc>,
}

impl SettingsRecord {
    pub fn settings(&self) -> Settings {
        Settings {
            temperature_target: self.temperature_target,
            humidity_target: self.humidity_target,
        }
    }
}

trait Timestamped {
    fn device_id(&self) -> &str;
    fn timestamp(&self) -> DateTime<Utc>;
}

macro_rules! timestamped {
    ($($t:ty),*) => {$(
        impl Timestamped for $t {
            fn device_id(&self) -> &str {
                &self.device_id
            }
            fn timestamp(&self) -> DateTime<Utc> {
                self.timestamp
            }
        }
    )*};
}
timestamped!(ImageRecord, CountRecord, FridgeStatRecord);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collection {
    Images,
    Counts,
    Fridgestats,
}

impl FromStr for Collection {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, StoreError> {
        match s {
            "images" => Ok(Self::Images),
            "counts" => Ok(Self::Counts),
            "fridgestats" => Ok(Self::Fridgestats),
            other => Err(StoreError::UnknownCollection(other.to_owned())),
        }
    }
}

/// A record from any of the queryable collections.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Record {
    Image(Arc<ImageRecord>),
    Count(Arc<CountRecord>),
    FridgeStat(Arc<FridgeStatRecord>),
}

impl Record {
    pub fn timestamp(&self) -> DateTime<Utc> {
        match self {
            Record::Image(r) => r.timestamp,
            Record::Count(r) => r.timestamp,
            Record::FridgeStat(r) => r.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeResult<T> {
    pub records: Vec<T>,
    pub truncated: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("unknown collection {0:?}")]
    UnknownCollection(String),
    #[error("timestamp {timestamp} for {device_id} precedes latest stored {latest}")]
    OutOfOrder {
        device_id: String,
        timestamp: DateTime<Utc>,
        latest: DateTime<Utc>,
    },
    #[error("invalid range: from {from} is after to {to}")]
    InvalidRange { from: DateTime<Utc>, to: DateTime<Utc> },
    #[error("limit must be at least 1")]
    InvalidLimit,
    #[error("username {0:?} already exists")]
    UsernameTaken(String),
}

/// Result of an insert; duplicates carry the ids already stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inserted {
    New(Vec<u64>),
    Duplicate(Vec<u64>),
}

impl Inserted {
    pub fn ids(&self) -> &[u64] {
        match self {
            Inserted::New(ids) | Inserted::Duplicate(ids) => ids,
        }
    }

    pub fn is_duplicate(&self) -> bool {
        matches!(self, Inserted::Duplicate(_))
    }
}

type Series<T> = HashMap<String, Arc<Vec<Arc<T>>>>;

/// Immutable view of the telemetry collections. Per device, records are in
/// ascending timestamp order and the i-th count belongs to the i-th image.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    images: Series<ImageRecord>,
    counts: Series<CountRecord>,
    stats: Series<FridgeStatRecord>,
}

fn push<T>(series: &mut Series<T>, device: &str, rec: T) {
    let v = series.entry(device.to_owned()).or_default();
    Arc::make_mut(v).push(Arc::new(rec));
}

fn find<'a, T: Timestamped>(series: &'a Series<T>, device: &str, ts: DateTime<Utc>) -> Option<&'a Arc<T>> {
    let v = series.get(device)?;
    let i = v.binary_search_by(|r| r.timestamp().cmp(&ts)).ok()?;
    v.get(i)
}

fn latest<T: Timestamped>(series: &Series<T>, device: &str) -> Option<Arc<T>> {
    series.get(device)?.last().cloned()
}

fn range<T: Timestamped>(
    series: &Series<T>,
    device: &str,
    from: Option<DateTime<Utc>>,
    to: Option<DateTime<Utc>>,
    limit: usize,
) -> RangeResult<Arc<T>> {
    let Some(v) = series.get(device) else {
        return RangeResult {
            records: Vec::new(),
            truncated: false,
        };
    };
    let lo = from.map_or(0, |f| v.partition_point(|r| r.timestamp() < f));
    let hi = to.map_or(v.len(), |t| v.partition_point(|r| r.timestamp() <= t));
    let hi = hi.max(lo);
    RangeResult {
        records: v[lo..hi.min(lo + limit)].to_vec(),
        truncated: hi - lo > limit,
    }
}

impl Snapshot {
    pub fn devices(&self) -> Vec<String> {
        let mut d: Vec<String> = self.images.keys().chain(self.stats.keys()).cloned().collect();
        d.sort();
        d.dedup();
        d
    }

    pub fn images(&self, device: &str) -> &[Arc<ImageRecord>] {
        self.images.get(device).map_or(&[], |v| v.as_slice())
    }

    pub fn counts(&self, device: &str) -> &[Arc<CountRecord>] {
        self.counts.get(device).map_or(&[], |v| v.as_slice())
    }

    pub fn fridgestats(&self, device: &str) -> &[Arc<FridgeStatRecord>] {
        self.stats.get(device).map_or(&[], |v| v.as_slice())
    }

    pub fn image_count(&self) -> usize {
        self.images.values().map(|v| v.len()).sum()
    }

    pub fn count_count(&self) -> usize {
        self.counts.values().map(|v| v.len()).sum()
    }

    pub fn fridgestat_count(&self) -> usize {
        self.stats.values().map(|v| v.len()).sum()
    }

    /// The image a count record points at, if it exists.
    pub fn resolve(&self, count: &CountRecord) -> Option<Arc<ImageRecord>> {
        find(&self.images, &count.device_id, count.timestamp)
            .filter(|img| img.id == count.image_id)
            .cloned()
    }

    pub fn latest(&self, collection: Collection, device: &str) -> Option<Record> {
        match collection {
            Collection::Images => latest(&self.images, device).map(Record::Image),
            Collection::Counts => latest(&self.counts, device).map(Record::Count),
            Collection::Fridgestats => latest(&self.stats, device).map(Record::FridgeStat),
        }
    }

    pub fn latest_image(&self, device: &str) -> Option<Arc<ImageRecord>> {
        latest(&self.images, device)
    }

    pub fn latest_counts(&self, device: &str) -> Option<Arc<CountRecord>> {
        latest(&self.counts, device)
    }

    pub fn latest_fridgestat(&self, device: &str) -> Option<Arc<FridgeStatRecord>> {
        latest(&self.stats, device)
    }

    /// Records with timestamps in `[from, to]`, oldest first, at most `limit`.
    /// Missing bounds are unbounded.
    pub fn range(
        &self,
        collection: Collection,
        device: &str,
        from: Option<DateTime<Utc>>,
        to: Option<DateTime<Utc>>,
        limit: usize,
    ) -> Result<RangeResult<Record>, StoreError> {
        if let (Some(f), Some(t)) = (from, to) {
            if f > t {
                return Err(StoreError::InvalidRange { from: f, to: t });
            }
        }
        if limit == 0 {
            return Err(StoreError::InvalidLimit);
        }
        fn wrap<T>(r: RangeResult<Arc<T>>, f: fn(Arc<T>) -> Record) -> RangeResult<Record> {
            RangeResult {
                records: r.records.into_iter().map(f).collect(),
                truncated: r.truncated,
            }
        }
        Ok(match collection {
            Collection::Images => wrap(range(&self.images, device, from, to, limit), Record::Image),
            Collection::Counts => wrap(range(&self.counts, device, from, to, limit), Record::Count),
            Collection::Fridgestats => {
                wrap(range(&self.stats, device, from, to, limit), Record::FridgeStat)
            }
        })
    }
}

struct Appender {
    images: File,
    counts: File,
    stats: File,
    users: File,
    settings: File,
    next_image: u64,
    next_count: u64,
    next_stat: u64,
    sync: bool,
}

fn append_line<T: Serialize>(file: &mut File, rec: &T, sync: bool) -> io::Result<()> {
    let mut line = serde_json::to_vec(rec).map_err(io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    if sync {
        file.sync_data()?;
    }
    Ok(())
}

/// What recovery threw away when the store was opened.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub torn_lines: usize,
    pub unparsable_lines: usize,
    pub orphan_images: usize,
    pub dangling_counts: usize,
    pub out_of_order: usize,
}

impl RecoveryReport {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

pub struct Store {
    dir: PathBuf,
    index: RwLock<Arc<Snapshot>>,
    users: RwLock<HashMap<String, UserRecord>>,
    settings: RwLock<HashMap<String, SettingsRecord>>,
    appender: Mutex<Appender>,
    recovery: RecoveryReport,
}

struct Loaded<T> {
    records: Vec<T>,
    dirty: bool,
}

fn read_lines<T: DeserializeOwned>(path: &Path, report: &mut RecoveryReport) -> io::Result<Loaded<T>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    let mut records = Vec::new();
    let mut dirty = false;
    let mut rest = bytes.as_slice();
    while !rest.is_empty() {
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            report.torn_lines += 1;
            dirty = true;
            break;
        };
        let line = &rest[..nl];
        rest = &rest[nl + 1..];
        match serde_json::from_slice::<T>(line) {
            Ok(r) => records.push(r),
            Err(_) => {
                report.unparsable_lines += 1;
                dirty = true;
            }
        }
    }
    Ok(Loaded { records, dirty })
}

fn rewrite<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = File::create(&tmp)?;
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn open_append(path: &Path) -> io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

/// Keeps records whose timestamps strictly increase per device.
fn monotone<T: Timestamped>(records: Vec<T>, report: &mut RecoveryReport) -> (Vec<T>, bool) {
    let mut last: HashMap<String, DateTime<Utc>> = HashMap::new();
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = false;
    for r in records {
        let ok = last.get(r.device_id()).is_none_or(|t| *t < r.timestamp());
        if ok {
            last.insert(r.device_id().to_owned(), r.timestamp());
            kept.push(r);
        } else {
            report.out_of_order += 1;
            dropped = true;
        }
    }
    (kept, dropped)
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        Self::open_with(dir, false)
    }

    /// Opens or creates the store in `dir`. With `sync`, every append is
    /// followed by `fdatasync`.
    pub fn open_with(dir: impl Into<PathBuf>, sync: bool) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut report = RecoveryReport::default();

        let images: Loaded<ImageRecord> = read_lines(&dir.join(IMAGES_FILE), &mut report)?;
        let counts: Loaded<CountRecord> = read_lines(&dir.join(COUNTS_FILE), &mut report)?;
        let stats: Loaded<FridgeStatRecord> = read_lines(&dir.join(FRIDGESTATS_FILE), &mut report)?;
        let users: Loaded<UserRecord> = read_lines(&dir.join(USERS_FILE), &mut report)?;
        let settings: Loaded<SettingsRecord> = read_lines(&dir.join(SETTINGS_FILE), &mut report)?;

        let (image_list, images_unordered) = monotone(images.records, &mut report);
        let (stat_list, stats_unordered) = monotone(stats.records, &mut report);

        // Pair counts with images; anything unpaired is an interrupted ingest.
        let by_id: HashMap<u64, &ImageRecord> = image_list.iter().map(|i| (i.id, i)).collect();
        let mut paired_images = std::collections::HashSet::new();
        let mut count_list = Vec::with_capacity(counts.records.len());
        for c in counts.records {
            let ok = by_id.get(&c.image_id).is_some_and(|img| {
                img.device_id == c.device_id && img.timestamp == c.timestamp
            }) && !paired_images.contains(&c.image_id);
            if ok {
                paired_images.insert(c.image_id);
                count_list.push(c);
            } else {
                report.dangling_counts += 1;
            }
        }
        let n_images = image_list.len();
        let image_list: Vec<ImageRecord> = image_list
            .into_iter()
            .filter(|i| paired_images.contains(&i.id))
            .collect();
        report.orphan_images += n_images - image_list.len();
        let counts_dropped = report.dangling_counts > 0;

        if images.dirty || images_unordered || image_list.len() != n_images {
            rewrite(&dir.join(IMAGES_FILE), &image_list)?;
        }
        if counts.dirty || counts_dropped {
            rewrite(&dir.join(COUNTS_FILE), &count_list)?;
        }
        if stats.dirty || stats_unordered {
            rewrite(&dir.join(FRIDGESTATS_FILE), &stat_list)?;
        }
        if users.dirty {
            rewrite(&dir.join(USERS_FILE), &users.records)?;
        }
        if settings.dirty {
            rewrite(&dir.join(SETTINGS_FILE), &settings.records)?;
        }
        if !report.is_clean() {
            warn!(?report, dir = %dir.display(), "store recovered from an unclean shutdown");
        }

        let next = |ids: &mut dyn Iterator<Item = u64>| ids.max().map_or(1, |m| m + 1);
        let next_image = next(&mut image_list.iter().map(|r| r.id));
        let next_count = next(&mut count_list.iter().map(|r| r.id));
        let next_stat = next(&mut stat_list.iter().map(|r| r.id));

        let mut snap = Snapshot::default();
        for r in image_list {
            let d = r.device_id.clone();
            push(&mut snap.images, &d, r);
        }
        for r in count_list {
            let d = r.device_id.clone();
            push(&mut snap.counts, &d, r);
        }
        for r in stat_list {
            let d = r.device_id.clone();
            push(&mut snap.stats, &d, r);
        }
        // Counts follow image order per device because both are monotone and
        // paired one to one; sort defensively in case ids were interleaved.
        for v in snap.counts.values_mut() {
            Arc::make_mut(v).sort_by_key(|c| c.timestamp);
        }

        let users = users
            .records
            .into_iter()
            .map(|u| (u.username.clone(), u))
            .collect();
        let settings = settings
            .records
            .into_iter()
            .map(|s| (s.device_id.clone(), s))
            .collect();

        let appender = Appender {
            images: open_append(&dir.join(IMAGES_FILE))?,
            counts: open_append(&dir.join(COUNTS_FILE))?,
            stats: open_append(&dir.join(FRIDGESTATS_FILE))?,
            users: open_append(&dir.join(USERS_FILE))?,
            settings: open_append(&dir.join(SETTINGS_FILE))?,
            next_image,
            next_count,
            next_stat,
            sync,
        };
        info!(
            dir = %dir.display(),
            images = snap.image_count(),
            fridgestats = snap.fridgestat_count(),
            "store opened"
        );
        Ok(Self {
            dir,
            index: RwLock::new(Arc::new(snap)),
            users: RwLock::new(users),
            settings: RwLock::new(settings),
            appender: Mutex::new(appender),
            recovery: report,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn recovery(&self) -> &RecoveryReport {
        &self.recovery
    }

    /// Current index; never changes after it is returned.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        Arc::clone(&self.index.read())
    }

    fn publish(&self, f: impl FnOnce(&mut Snapshot)) {
        let mut guard = self.index.write();
        f(Arc::make_mut(&mut guard));
    }

    /// Stores an image record and its count record. Both lines are written
    /// (image first) before either becomes visible to readers.
    pub fn insert_detection(&self, ev: &DetectionEvent) -> Result<Inserted, StoreError> {
        let mut app = self.appender.lock();
        let snap = self.snapshot();
        if let Some(img) = find(&snap.images, &ev.device_id, ev.timestamp) {
            let count = find(&snap.counts, &ev.device_id, ev.timestamp).map(|c| c.id);
            return Ok(Inserted::Duplicate(
                std::iter::once(img.id).chain(count).collect(),
            ));
        }
        if let Some(last) = snap.latest_image(&ev.device_id) {
            if last.timestamp > ev.timestamp {
                return Err(StoreError::OutOfOrder {
                    device_id: ev.device_id.clone(),
                    timestamp: ev.timestamp,
                    latest: last.timestamp,
                });
            }
        }
        let image = ImageRecord {
            id: app.next_image,
            device_id: ev.device_id.clone(),
            timestamp: ev.timestamp,
            scene: ev.scene.clone(),
            items: ev.items.clone(),
        };
        let count = CountRecord {
            id: app.next_count,
            device_id: ev.device_id.clone(),
            timestamp: ev.timestamp,
            counts: ev.counts.clone(),
            image_id: image.id,
        };
        let sync = app.sync;
        append_line(&mut app.images, &image, sync)?;
        app.next_image += 1;
        append_line(&mut app.counts, &count, sync)?;
        app.next_count += 1;
        let ids = vec![image.id, count.id];
        drop(snap);
        self.publish(|s| {
            push(&mut s.images, &ev.device_id, image);
            push(&mut s.counts, &ev.device_id, count);
        });
        Ok(Inserted::New(ids))
    }

    pub fn insert_reading(&self, r: &SensorReading) -> Result<Inserted, StoreError> {
        let mut app = self.appender.lock();
        let snap = self.snapshot();
        if let Some(rec) = find(&snap.stats, &r.device_id, r.timestamp) {
            return Ok(Inserted::Duplicate(vec![rec.id]));
        }
        if let Some(last) = snap.latest_fridgestat(&r.device_id) {
            if last.timestamp > r.timestamp {
                return Err(StoreError::OutOfOrder {
                    device_id: r.device_id.clone(),
                    timestamp: r.timestamp,
                    latest: last.timestamp,
                });
            }
        }
        let rec = FridgeStatRecord {
            id: app.next_stat,
            device_id: r.device_id.clone(),
            timestamp: r.timestamp,
            temperature: r.temperature,
            humidity: r.humidity,
            temperature_target: r.temperature_target,
            humidity_target: r.humidity_target,
        };
        let sync = app.sync;
        append_line(&mut app.stats, &rec, sync)?;
        app.next_stat += 1;
        let id = rec.id;
        drop(snap);
        self.publish(|s| push(&mut s.stats, &r.device_id, rec));
        Ok(Inserted::New(vec![id]))
    }

    pub fn user(&self, username: &str) -> Option<UserRecord> {
        self.users.read().get(username).cloned()
    }

    pub fn insert_user(&self, user: UserRecord) -> Result<(), StoreError> {
        let mut app = self.appender.lock();
        let mut users = self.users.write();
        if users.contains_key(&user.username) {
            return Err(StoreError::UsernameTaken(user.username));
        }
        let sync = app.sync;
        append_line(&mut app.users, &user, sync)?;
        users.insert(user.username.clone(), user);
        Ok(())
    }

    pub fn settings(&self, device: &str) -> Option<SettingsRecord> {
        self.settings.read().get(device).cloned()
    }

    pub fn put_settings(&self, rec: SettingsRecord) -> Result<(), StoreError> {
        let mut app = self.appender.lock();
        let sync = app.sync;
        append_line(&mut app.settings, &rec, sync)?;
        self.settings.write().insert(rec.device_id.clone(), rec);
        Ok(())
    }
}
