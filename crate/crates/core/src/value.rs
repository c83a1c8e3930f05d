//! Stream schemas and the payload values that travel on streams.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Schema of a single scalar: a real number or one level out of a fixed set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarSchema {
    Numeric,
    Categorical(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ScalarSchema,
}

/// Value schema of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSchema {
    Numeric,
    Categorical(Vec<String>),
    Tuple(Vec<FieldSchema>),
}

/// Name used for the single field of a scalar stream.
pub const SCALAR_FIELD: &str = "value";

impl StreamSchema {
    /// Flattened view of the fields; scalar schemas expose one field named `value`.
    pub fn fields(&self) -> Vec<FieldSchema> {
        match self {
            StreamSchema::Numeric => vec![FieldSchema {
                name: SCALAR_FIELD.to_string(),
                kind: ScalarSchema::Numeric,
            }],
            StreamSchema::Categorical(levels) => vec![FieldSchema {
                name: SCALAR_FIELD.to_string(),
                kind: ScalarSchema::Categorical(levels.clone()),
            }],
            StreamSchema::Tuple(fields) => fields.clone(),
        }
    }

    pub fn is_tuple(&self) -> bool {
        matches!(self, StreamSchema::Tuple(_))
    }

    /// Checks `value` against the schema, returning a description of the first mismatch.
    pub fn check(&self, value: &Value) -> Result<(), String> {
        match (self, value) {
            (StreamSchema::Numeric, Value::Number(x)) => check_number(*x),
            (StreamSchema::Categorical(levels), Value::Level(l)) => check_level(levels, l),
            (StreamSchema::Tuple(fields), Value::Tuple(map)) => {
                if map.len() != fields.len() {
                    return Err(format!(
                        "expected {} fields, found {}",
                        fields.len(),
                        map.len()
                    ));
                }
                for field in fields {
                    let Some(scalar) = map.get(&field.name) else {
                        return Err(format!("missing field `{}`", field.name));
                    };
                    field
                        .kind
                        .check(scalar)
                        .map_err(|e| format!("field `{}`: {e}", field.name))?;
                }
                Ok(())
            }
            (schema, value) => Err(format!("value {value} does not match schema {schema:?}")),
        }
    }

    /// Splits a conforming value into its fields in schema order.
    pub fn split(&self, value: &Value) -> Vec<Scalar> {
        match value {
            Value::Number(x) => vec![Scalar::Number(*x)],
            Value::Level(l) => vec![Scalar::Level(l.clone())],
            Value::Tuple(map) => self
                .fields()
                .iter()
                .map(|f| map[&f.name].clone())
                .collect(),
        }
    }

    /// Inverse of [`StreamSchema::split`].
    pub fn assemble(&self, mut scalars: Vec<Scalar>) -> Value {
        match self {
            StreamSchema::Numeric | StreamSchema::Categorical(_) => scalars.remove(0).into(),
            StreamSchema::Tuple(fields) => Value::Tuple(
                fields
                    .iter()
                    .map(|f| f.name.clone())
                    .zip(scalars)
                    .collect(),
            ),
        }
    }
}

impl ScalarSchema {
    pub fn check(&self, scalar: &Scalar) -> Result<(), String> {
        match (self, scalar) {
            (ScalarSchema::Numeric, Scalar::Number(x)) => check_number(*x),
            (ScalarSchema::Categorical(levels), Scalar::Level(l)) => check_level(levels, l),
            (schema, scalar) => Err(format!("scalar {scalar:?} does not match {schema:?}")),
        }
    }

    pub fn levels(&self) -> Option<&[String]> {
        match self {
            ScalarSchema::Categorical(levels) => Some(levels),
            ScalarSchema::Numeric => None,
        }
    }
}

fn check_number(x: f64) -> Result<(), String> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(format!("non-finite number {x}"))
    }
}

fn check_level(levels: &[String], level: &str) -> Result<(), String> {
    if levels.iter().any(|l| l == level) {
        Ok(())
    } else {
        Err(format!("unknown level `{level}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Level(String),
}

impl Scalar {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Scalar::Number(x) => Some(*x),
            Scalar::Level(_) => None,
        }
    }

    pub fn as_level(&self) -> Option<&str> {
        match self {
            Scalar::Level(l) => Some(l),
            Scalar::Number(_) => None,
        }
    }
}

/// Payload of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Level(String),
    Tuple(BTreeMap<String, Scalar>),
}

impl Value {
    pub fn tuple<I, K>(fields: I) -> Self
    where
        I: IntoIterator<Item = (K, Scalar)>,
        K: Into<String>,
    {
        Value::Tuple(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn field(&self, name: &str) -> Option<&Scalar> {
        match self {
            Value::Tuple(map) => map.get(name),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }
}

impl From<Scalar> for Value {
    fn from(s: Scalar) -> Self {
        match s {
            Scalar::Number(x) => Value::Number(x),
            Scalar::Level(l) => Value::Level(l),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serde_json::to_string(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "{self:?}"),
        }
    }
}
