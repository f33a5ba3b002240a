//! Version tags embedded in every model file.

use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

pub trait SchemaName {
    const NAME: &'static str;
}

macro_rules! schema {
    ($ty:ident, $name:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
        pub struct $ty;
        impl SchemaName for $ty {
            const NAME: &'static str = $name;
        }
    };
}

schema!(ExpertSchema, "dogen-expert/1");
schema!(RouterSchema, "dogen-router/1");
schema!(EnsembleSchema, "dogen-ensemble/1");
schema!(StackerSchema, "dogen-stacker/1");
schema!(ConfigSchema, "dogen-config/1");

/// Serializes as the schema string and refuses any other string on input.
pub struct SchemaTag<S>(PhantomData<S>);

impl<S> SchemaTag<S> {
    pub const fn new() -> Self {
        SchemaTag(PhantomData)
    }
}

impl<S> Default for SchemaTag<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S> Clone for SchemaTag<S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for SchemaTag<S> {}

impl<S> PartialEq for SchemaTag<S> {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<S: SchemaName> fmt::Debug for SchemaTag<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(S::NAME)
    }
}

impl<S: SchemaName> Serialize for SchemaTag<S> {
    fn serialize<Se: Serializer>(&self, s: Se) -> Result<Se::Ok, Se::Error> {
        s.serialize_str(S::NAME)
    }
}

impl<'de, S: SchemaName> Deserialize<'de> for SchemaTag<S> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V<S>(PhantomData<S>);
        impl<S: SchemaName> Visitor<'_> for V<S> {
            type Value = SchemaTag<S>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "schema {:?}", S::NAME)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == S::NAME {
                    Ok(SchemaTag::new())
                } else {
                    Err(E::custom(format!(
                        "expected schema {:?}, found {v:?}",
                        S::NAME
                    )))
                }
            }
        }
        d.deserialize_str(V(PhantomData))
    }
}
