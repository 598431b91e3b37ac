//! Icon lookup: on-disk cache, then a remote search service, then the
//! bundled pack, then a placeholder.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use diagplan_core::icon::{IconAsset, IconError, IconProvider};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENDPOINT_VAR: &str = "DIAGRAM_ICON_ENDPOINT";
pub const KEY_VAR: &str = "DIAGRAM_ICON_KEY";
pub const PACK_PROVIDER: &str = "local-pack";

/// Pack shipped with the crate.
pub fn bundled_pack_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/icons")
}

/// Lowercased, trimmed, whitespace collapsed.
pub fn normalize_query(q: &str) -> String {
    q.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn tokens(s: &str) -> Vec<String> {
    let cleaned: String = s.chars().map(|c| if c.is_alphanumeric() { c } else { ' ' }).collect();
    cleaned
        .split_whitespace()
        .map(|t| {
            let t = t.to_lowercase();
            match t.strip_suffix('s') {
                Some(stem) if stem.len() >= 3 && !stem.ends_with('s') => stem.to_string(),
                _ => t,
            }
        })
        .collect()
}

/// Directory cache keyed by the SHA-256 of the normalized query. Each
/// entry is `<key>.json` plus an optional payload `<key>.<ext>`.
#[derive(Debug, Clone)]
pub struct IconCache {
    dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    query: String,
    asset: IconAsset,
}

impl IconCache {
    /// Opens or creates `dir`. An unusable directory disables the cache.
    pub fn open(dir: &Path) -> Self {
        let usable = fs::create_dir_all(dir).is_ok() && tempfile::NamedTempFile::new_in(dir).is_ok();
        if !usable {
            log::warn!("icon cache {} is not writable; caching disabled", dir.display());
            return IconCache::disabled();
        }
        IconCache { dir: Some(dir.to_path_buf()) }
    }

    pub fn disabled() -> Self {
        IconCache { dir: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.dir.is_some()
    }

    pub fn key(query: &str) -> String {
        hex::encode(Sha256::digest(normalize_query(query).as_bytes()))
    }

    pub fn get(&self, query: &str) -> Option<IconAsset> {
        let dir = self.dir.as_ref()?;
        let text = fs::read_to_string(dir.join(format!("{}.json", Self::key(query)))).ok()?;
        let entry: CacheEntry = serde_json::from_str(&text).ok()?;
        match &entry.asset.path {
            Some(p) if !Path::new(p).is_file() => None,
            _ => Some(entry.asset),
        }
    }

    /// Stores `asset`, writing `payload` next to it when given. Returns the
    /// asset as stored, with its path pointing into the cache.
    pub fn put(&self, query: &str, asset: &IconAsset, payload: Option<(&[u8], &str)>) -> Option<IconAsset> {
        let dir = self.dir.as_ref()?;
        let key = Self::key(query);
        let mut stored = asset.clone();
        let result = (|| -> std::io::Result<()> {
            if let Some((bytes, ext)) = payload {
                let ext: String = ext.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
                let path = dir.join(format!("{key}.{}", if ext.is_empty() { "bin" } else { &ext }));
                write_atomic(dir, &path, bytes)?;
                stored.path = Some(path.display().to_string());
            }
            let entry = CacheEntry { query: normalize_query(query), asset: stored.clone() };
            write_atomic(dir, &dir.join(format!("{key}.json")), serde_json::to_string(&entry)?.as_bytes())
        })();
        match result {
            Ok(()) => Some(stored),
            Err(e) => {
                log::warn!("icon cache write failed: {e}");
                None
            }
        }
    }
}

fn write_atomic(dir: &Path, path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackEntry {
    pub name: String,
    pub file: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackIndex {
    pub icons: Vec<PackEntry>,
}

/// Icon pack: a directory of SVG files described by `index.json`.
#[derive(Debug, Clone)]
pub struct LocalPack {
    dir: PathBuf,
    entries: Vec<(PackEntry, Vec<String>, Vec<String>)>,
}

impl LocalPack {
    pub fn open(dir: &Path) -> Result<Self, IconError> {
        let text = fs::read_to_string(dir.join("index.json"))
            .map_err(|e| IconError(format!("cannot read pack index in {}: {e}", dir.display())))?;
        let index: PackIndex = serde_json::from_str(&text).map_err(|e| IconError(format!("bad pack index: {e}")))?;
        Ok(Self::from_index(dir, index))
    }

    pub fn from_index(dir: &Path, index: PackIndex) -> Self {
        let entries = index
            .icons
            .into_iter()
            .map(|e| {
                let name = tokens(&e.name);
                let mut all = name.clone();
                for t in &e.tags {
                    all.extend(tokens(t));
                }
                (e, name, all)
            })
            .collect();
        LocalPack { dir: dir.to_path_buf(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry sharing the most query tokens with its name and tags; ties go
    /// to more name matches, then to index order.
    pub fn find(&self, query: &str) -> Option<IconAsset> {
        let mut q = tokens(query);
        q.dedup();
        let mut best: Option<((usize, usize), &PackEntry)> = None;
        for (entry, name, all) in &self.entries {
            let score = (q.iter().filter(|t| all.contains(t)).count(), q.iter().filter(|t| name.contains(t)).count());
            if score.0 > 0 && best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, entry));
            }
        }
        let (_, entry) = best?;
        Some(IconAsset {
            provider: PACK_PROVIDER.into(),
            query: query.into(),
            path: Some(self.dir.join(&entry.file).display().to_string()),
            attribution: format!("bundled icon \"{}\"", entry.name),
        })
    }
}

/// One search hit from a remote service.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteHit {
    pub url: String,
    pub attribution: String,
    pub extension: String,
}

pub trait RemoteIcons: Send + Sync {
    fn name(&self) -> &str;
    fn search(&self, query: &str) -> Result<Option<RemoteHit>, IconError>;
    fn fetch(&self, hit: &RemoteHit) -> Result<Vec<u8>, IconError>;
}

/// Adapter for a Noun Project style search API: `GET endpoint?query=..`
/// answering `{"icons": [{"thumbnail_url": .., "attribution": ..}]}`.
pub struct HttpIconApi {
    endpoint: String,
    key: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct SearchResponse {
    #[serde(default)]
    icons: Vec<SearchIcon>,
}

#[derive(Deserialize)]
struct SearchIcon {
    #[serde(alias = "icon_url")]
    thumbnail_url: String,
    #[serde(default)]
    attribution: String,
}

impl HttpIconApi {
    pub fn new(endpoint: impl Into<String>, key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(15)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpIconApi { endpoint: endpoint.into(), key: key.into(), agent }
    }

    /// Configured from `DIAGRAM_ICON_ENDPOINT` and `DIAGRAM_ICON_KEY`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(KEY_VAR).unwrap_or_default();
        Some(Self::new(endpoint, key))
    }

    fn get(&self, url: &str, query: Option<&str>) -> Result<Vec<u8>, IconError> {
        let mut req = self.agent.get(url);
        if let Some(q) = query {
            req = req.query("query", q).query("limit", "1");
        }
        if !self.key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {}", self.key));
        }
        let mut resp = req.call().map_err(|e| IconError(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(IconError(format!("{url} answered {}", resp.status())));
        }
        resp.body_mut().read_to_vec().map_err(|e| IconError(e.to_string()))
    }
}

impl RemoteIcons for HttpIconApi {
    fn name(&self) -> &str {
        "remote"
    }

    fn search(&self, query: &str) -> Result<Option<RemoteHit>, IconError> {
        let body = self.get(&self.endpoint, Some(query))?;
        let resp: SearchResponse = serde_json::from_slice(&body).map_err(|e| IconError(e.to_string()))?;
        Ok(resp.icons.into_iter().next().map(|icon| {
            let path = icon.thumbnail_url.split(['?', '#']).next().unwrap_or("");
            let extension = path.rsplit_once('.').map(|(_, e)| e).filter(|e| e.len() <= 4 && !e.contains('/'));
            RemoteHit {
                attribution: if icon.attribution.is_empty() { format!("icon from {}", self.endpoint) } else { icon.attribution },
                extension: extension.unwrap_or("svg").to_string(),
                url: icon.thumbnail_url,
            }
        }))
    }

    fn fetch(&self, hit: &RemoteHit) -> Result<Vec<u8>, IconError> {
        self.get(&hit.url, None)
    }
}

/// The full lookup chain. Never fails: every miss ends in a placeholder.
pub struct IconSearch {
    pub cache: IconCache,
    pub remote: Option<Box<dyn RemoteIcons>>,
    pub pack: Option<LocalPack>,
}

impl IconSearch {
    /// Cache only under `cache_dir`, remote service from the environment,
    /// and the pack in `pack_dir` if it loads.
    pub fn from_env(cache_dir: Option<&Path>, pack_dir: Option<&Path>) -> Self {
        let pack = pack_dir.and_then(|d| match LocalPack::open(d) {
            Ok(p) => Some(p),
            Err(e) => {
                log::warn!("{e}");
                None
            }
        });
        IconSearch {
            cache: cache_dir.map(IconCache::open).unwrap_or_else(IconCache::disabled),
            remote: HttpIconApi::from_env().map(|a| Box::new(a) as Box<dyn RemoteIcons>),
            pack,
        }
    }

    pub fn search_icon(&self, query: &str) -> IconAsset {
        if normalize_query(query).is_empty() {
            return IconAsset::placeholder(query);
        }
        if let Some(hit) = self.cache.get(query) {
            return hit;
        }
        if let Some(remote) = &self.remote {
            match self.try_remote(remote.as_ref(), query) {
                Ok(Some(asset)) => return asset,
                Ok(None) => {}
                Err(e) => log::warn!("remote icon search for {query:?} failed: {e}"),
            }
        }
        if let Some(asset) = self.pack.as_ref().and_then(|p| p.find(query)) {
            return asset;
        }
        IconAsset::placeholder(query)
    }

    fn try_remote(&self, remote: &dyn RemoteIcons, query: &str) -> Result<Option<IconAsset>, IconError> {
        let Some(hit) = remote.search(query)? else { return Ok(None) };
        let bytes = remote.fetch(&hit)?;
        let asset = IconAsset { provider: remote.name().into(), query: query.into(), path: None, attribution: hit.attribution };
        // the payload has to live somewhere; without a cache the hit is unusable
        Ok(self.cache.put(query, &asset, Some((&bytes, &hit.extension))))
    }
}

impl IconProvider for IconSearch {
    fn search(&self, query: &str) -> Result<IconAsset, IconError> {
        Ok(self.search_icon(query))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn pack(dir: &Path, names: &[(&str, &[&str])]) -> LocalPack {
        let icons = names
            .iter()
            .map(|(n, tags)| {
                let file = format!("{n}.svg");
                fs::write(dir.join(&file), format!("<svg><title>{n}</title></svg>")).unwrap();
                PackEntry { name: n.to_string(), file, tags: tags.iter().map(|t| t.to_string()).collect() }
            })
            .collect();
        let index = PackIndex { icons };
        fs::write(dir.join("index.json"), serde_json::to_string(&index).unwrap()).unwrap();
        LocalPack::open(dir).unwrap()
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_query("  New\tMoon \n"), "new moon");
        assert_eq!(IconCache::key("Sun"), IconCache::key(" sun "));
        assert_ne!(IconCache::key("sun"), IconCache::key("suns"));
    }

    #[test]
    fn pack_matching() {
        let dir = tempfile::tempdir().unwrap();
        let p = pack(dir.path(), &[("sun", &["star"]), ("moon", &["lunar"]), ("earth", &["planet", "globe"])]);
        let sun = p.find("sun").unwrap();
        assert!(sun.path.unwrap().ends_with("sun.svg"));
        assert!(p.find("New Moon").unwrap().path.unwrap().ends_with("moon.svg"));
        assert!(p.find("the planets").unwrap().path.unwrap().ends_with("earth.svg"));
        assert_eq!(p.find("zxqv"), None);
        let empty = LocalPack::from_index(dir.path(), PackIndex { icons: vec![] });
        assert_eq!(empty.find("zxqv"), None);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = IconCache::open(dir.path());
        assert_eq!(cache.get("sun"), None);
        let asset = IconAsset { provider: "remote".into(), query: "Sun".into(), path: None, attribution: "by someone".into() };
        let stored = cache.put("Sun", &asset, Some((b"<svg/>", "svg"))).unwrap();
        assert_eq!(cache.get("sun"), Some(stored.clone()));
        assert_eq!(fs::read(stored.path.unwrap()).unwrap(), b"<svg/>");
    }

    #[test]
    fn concurrent_puts_leave_one_payload() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Arc::new(IconCache::open(dir.path()));
        let handles: Vec<_> = (0..8)
            .map(|i| {
                let cache = cache.clone();
                std::thread::spawn(move || {
                    let a = IconAsset { provider: "remote".into(), query: "sun".into(), path: None, attribution: format!("w{i}") };
                    cache.put("sun", &a, Some((format!("payload {i}").as_bytes(), "svg")));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(files.len(), 2, "{files:?}");
        let got = cache.get("sun").unwrap();
        let body = fs::read_to_string(got.path.unwrap()).unwrap();
        assert!(body.starts_with("payload "));
    }

    #[test]
    fn unwritable_cache_is_disabled() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("not-a-dir");
        fs::write(&file, "x").unwrap();
        let cache = IconCache::open(&file);
        assert!(!cache.is_enabled());
        assert_eq!(cache.put("sun", &IconAsset::placeholder("sun"), None), None);
    }

    struct FakeRemote {
        fail: bool,
        calls: AtomicUsize,
    }

    impl RemoteIcons for FakeRemote {
        fn name(&self) -> &str {
            "fake"
        }
        fn search(&self, query: &str) -> Result<Option<RemoteHit>, IconError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.fail {
                return Err(IconError("connection refused".into()));
            }
            Ok(query.to_lowercase().contains("sun").then(|| RemoteHit { url: "http://x/sun.svg".into(), attribution: "by A".into(), extension: "svg".into() }))
        }
        fn fetch(&self, _: &RemoteHit) -> Result<Vec<u8>, IconError> {
            Ok(b"<svg/>".to_vec())
        }
    }

    #[test]
    fn chain_order() {
        let dir = tempfile::tempdir().unwrap();
        let pack_dir = dir.path().join("pack");
        fs::create_dir(&pack_dir).unwrap();
        let search = IconSearch {
            cache: IconCache::open(&dir.path().join("cache")),
            remote: Some(Box::new(FakeRemote { fail: false, calls: AtomicUsize::new(0) })),
            pack: Some(pack(&pack_dir, &[("moon", &[])])),
        };
        let first = search.search_icon("Sun");
        assert_eq!(first.provider, "fake");
        assert_eq!(first.attribution, "by A");
        // second lookup comes from the cache
        assert_eq!(search.search_icon("sun"), first);
        assert_eq!(search.search_icon("nothing"), IconAsset::placeholder("nothing"));
        assert_eq!(search.search_icon("new moon").provider, PACK_PROVIDER);
    }

    #[test]
    fn network_failure_falls_through() {
        let dir = tempfile::tempdir().unwrap();
        let search = IconSearch {
            cache: IconCache::open(&dir.path().join("cache")),
            remote: Some(Box::new(FakeRemote { fail: true, calls: AtomicUsize::new(0) })),
            pack: Some(pack(dir.path(), &[("moon", &[])])),
        };
        assert_eq!(search.search_icon("full moon").provider, PACK_PROVIDER);
        assert!(search.search_icon("zxqv").is_placeholder());
        assert!(search.search("zxqv").is_ok());
    }

    #[test]
    fn bundled_pack_covers_common_domains() {
        let p = LocalPack::open(&bundled_pack_dir()).unwrap();
        assert!(p.len() >= 30);
        for q in ["sun", "new moon", "earth", "egg", "larva", "pupa", "adult butterfly", "gear", "cloud"] {
            let a = p.find(q).unwrap_or_else(|| panic!("no icon for {q}"));
            assert!(Path::new(a.path.as_ref().unwrap()).is_file(), "{q}");
        }
        let sun = p.find("sun").unwrap();
        assert!(sun.path.unwrap().ends_with("sun.svg"));
        assert!(p.find("new moon").unwrap().path.unwrap().ends_with("moon.svg"));
    }
}
