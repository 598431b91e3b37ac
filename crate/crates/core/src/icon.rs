//! Icon lookup interface shared by the renderer and exporters.

use alloc::string::String;

use serde::{Deserialize, Serialize};

/// Provider id used for generated placeholder glyphs.
pub const PLACEHOLDER_PROVIDER: &str = "placeholder";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IconAsset {
    pub provider: String,
    pub query: String,
    /// Payload file; `None` for a placeholder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub attribution: String,
}

impl IconAsset {
    pub fn placeholder(query: &str) -> Self {
        IconAsset {
            provider: PLACEHOLDER_PROVIDER.into(),
            query: query.into(),
            path: None,
            attribution: String::new(),
        }
    }

    pub fn is_placeholder(&self) -> bool {
        self.path.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("icon lookup failed: {0}")]
pub struct IconError(pub String);

/// Maps an object description to an icon.
pub trait IconProvider: Send + Sync {
    fn search(&self, query: &str) -> Result<IconAsset, IconError>;
}

impl<P: IconProvider + ?Sized> IconProvider for &P {
    fn search(&self, query: &str) -> Result<IconAsset, IconError> {
        (**self).search(query)
    }
}

impl<P: IconProvider + ?Sized> IconProvider for alloc::sync::Arc<P> {
    fn search(&self, query: &str) -> Result<IconAsset, IconError> {
        (**self).search(query)
    }
}

/// Always answers with a placeholder.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoIcons;

impl IconProvider for NoIcons {
    fn search(&self, query: &str) -> Result<IconAsset, IconError> {
        Ok(IconAsset::placeholder(query))
    }
}

/// Resolves through `provider`, turning failures into a placeholder.
pub fn resolve_icon(provider: &dyn IconProvider, query: &str) -> IconAsset {
    provider.search(query).unwrap_or_else(|_| IconAsset::placeholder(query))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Broken;
    impl IconProvider for Broken {
        fn search(&self, _: &str) -> Result<IconAsset, IconError> {
            Err(IconError("offline".into()))
        }
    }

    #[test]
    fn failures_become_placeholders() {
        let a = resolve_icon(&Broken, "sun");
        assert!(a.is_placeholder());
        assert_eq!(a.query, "sun");
        assert_eq!(resolve_icon(&NoIcons, "sun"), a);
    }
}
