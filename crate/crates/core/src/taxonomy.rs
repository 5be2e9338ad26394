//! Compatibility tags and the descriptor tree they live in.
//!
//! A tag is a dot-separated path such as `fpga.xilinx.virtex.xcv100`, read
//! from least to most specific. A virtual processor accepts an implementation
//! when the processor's tag is equal to, or an ancestor of, the
//! implementation's tag. [`TagIndex`] stores identifiers on the nodes of that
//! tree so the set of accepting processors for a query is a single walk from
//! the root.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Descriptor separator.
pub const SEPARATOR: char = '.';

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("tag is empty")]
    EmptyTag,
    #[error("empty descriptor at position {position} in {text:?}")]
    EmptyDescriptor { text: String, position: usize },
    #[error("illegal character {character:?} in {text:?}")]
    IllegalCharacter { text: String, character: char },
}

/// Ordered list of lower-case descriptors, least specific first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag {
    descriptors: Vec<String>,
}

fn is_descriptor_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_'
}

impl Tag {
    /// Parses the dot-separated text form, folding to lower case.
    pub fn parse(text: &str) -> Result<Self, TagError> {
        if text.is_empty() {
            return Err(TagError::EmptyTag);
        }
        let mut descriptors = Vec::new();
        for (position, raw) in text.split(SEPARATOR).enumerate() {
            if raw.is_empty() {
                return Err(TagError::EmptyDescriptor {
                    text: text.to_string(),
                    position,
                });
            }
            let folded = raw.to_ascii_lowercase();
            if let Some(character) = folded.chars().find(|c| !is_descriptor_char(*c)) {
                return Err(TagError::IllegalCharacter {
                    text: text.to_string(),
                    character,
                });
            }
            descriptors.push(folded);
        }
        Ok(Tag { descriptors })
    }

    /// Builds a tag from already-split descriptors, applying the same rules
    /// as [`Tag::parse`].
    pub fn from_descriptors<I, S>(descriptors: I) -> Result<Self, TagError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let parts: Vec<String> = descriptors
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        if parts.is_empty() {
            return Err(TagError::EmptyTag);
        }
        if parts.iter().any(|p| p.contains(SEPARATOR)) {
            let text = parts.join(".");
            return Err(TagError::IllegalCharacter {
                text,
                character: SEPARATOR,
            });
        }
        Tag::parse(&parts.join("."))
    }

    pub fn descriptors(&self) -> &[String] {
        &self.descriptors
    }

    /// Number of descriptors. Always at least 1.
    pub fn specificity(&self) -> usize {
        self.descriptors.len()
    }

    /// True when `self` (a processor's accept tag) is an equal-or-ancestor
    /// prefix of `implementation`.
    pub fn accepts(&self, implementation: &Tag) -> bool {
        is_ancestor_or_equal(self, implementation)
    }

    /// The tag one level up, or `None` at the root descriptor.
    pub fn parent(&self) -> Option<Tag> {
        if self.descriptors.len() <= 1 {
            return None;
        }
        Some(Tag {
            descriptors: self.descriptors[..self.descriptors.len() - 1].to_vec(),
        })
    }
}

/// The platform-wide compatibility predicate: an implementation tagged
/// `implementation_tag` may only be deployed to a processor whose tag is the
/// same node or an ancestor of it.
pub fn is_ancestor_or_equal(processor_tag: &Tag, implementation_tag: &Tag) -> bool {
    implementation_tag
        .descriptors
        .starts_with(&processor_tag.descriptors)
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.descriptors.join("."))
    }
}

impl FromStr for Tag {
    type Err = TagError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tag::parse(s)
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Tag::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("identifier {0} is already indexed")]
    DuplicateId(String),
    #[error("identifier {0} is not indexed")]
    UnknownId(String),
}

#[derive(Debug, Clone)]
struct Node<Id> {
    children: BTreeMap<String, Node<Id>>,
    ids: BTreeSet<Id>,
}

impl<Id> Default for Node<Id> {
    fn default() -> Self {
        Node {
            children: BTreeMap::new(),
            ids: BTreeSet::new(),
        }
    }
}

impl<Id> Node<Id> {
    fn is_empty(&self) -> bool {
        self.children.is_empty() && self.ids.is_empty()
    }
}

/// Descriptor tree with identifiers attached to nodes.
///
/// Each identifier sits on exactly one node. Empty branches are pruned on
/// removal.
#[derive(Debug, Clone)]
pub struct TagIndex<Id> {
    root: Node<Id>,
    locations: HashMap<Id, Tag>,
}

impl<Id> Default for TagIndex<Id> {
    fn default() -> Self {
        TagIndex {
            root: Node::default(),
            locations: HashMap::new(),
        }
    }
}

impl<Id> TagIndex<Id>
where
    Id: Clone + Ord + Hash + fmt::Display,
{
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn tag_of(&self, id: &Id) -> Option<&Tag> {
        self.locations.get(id)
    }

    pub fn insert(&mut self, tag: &Tag, id: Id) -> Result<(), IndexError> {
        if self.locations.contains_key(&id) {
            return Err(IndexError::DuplicateId(id.to_string()));
        }
        let mut node = &mut self.root;
        for descriptor in tag.descriptors() {
            node = node.children.entry(descriptor.clone()).or_default();
        }
        node.ids.insert(id.clone());
        self.locations.insert(id, tag.clone());
        Ok(())
    }

    pub fn remove(&mut self, id: &Id) -> Result<Tag, IndexError> {
        let tag = self
            .locations
            .remove(id)
            .ok_or_else(|| IndexError::UnknownId(id.to_string()))?;
        remove_at(&mut self.root, tag.descriptors(), id);
        Ok(tag)
    }

    /// Every identifier attached on the root-to-node path spelled by
    /// `implementation_tag`, i.e. every id whose tag accepts it.
    pub fn candidates(&self, implementation_tag: &Tag) -> BTreeSet<Id> {
        let mut found = BTreeSet::new();
        let mut node = &self.root;
        for descriptor in implementation_tag.descriptors() {
            match node.children.get(descriptor) {
                Some(child) => {
                    found.extend(child.ids.iter().cloned());
                    node = child;
                }
                None => break,
            }
        }
        found
    }
}

fn remove_at<Id: Ord>(node: &mut Node<Id>, path: &[String], id: &Id) {
    match path.split_first() {
        None => {
            node.ids.remove(id);
        }
        Some((head, rest)) => {
            if let Some(child) = node.children.get_mut(head) {
                remove_at(child, rest, id);
                if child.is_empty() {
                    node.children.remove(head);
                }
            }
        }
    }
}
