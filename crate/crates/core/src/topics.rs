use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `V x K` matrix whose columns are topics (distributions over the
/// vocabulary), stored column-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMatrix {
    vocab_size: usize,
    num_topics: usize,
    data: Vec<f64>,
}

impl TopicMatrix {
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let num_topics = columns.len();
        if num_topics == 0 {
            return Err(Error::invalid("topic matrix needs at least one column"));
        }
        let vocab_size = columns[0].len();
        if vocab_size == 0 {
            return Err(Error::invalid("topic matrix needs at least one row"));
        }
        let mut data = Vec::with_capacity(vocab_size * num_topics);
        for c in columns {
            if c.len() != vocab_size {
                return Err(Error::DimensionMismatch {
                    expected: vocab_size,
                    got: c.len(),
                });
            }
            data.extend(c);
        }
        Ok(Self {
            vocab_size,
            num_topics,
            data,
        })
    }

    pub fn from_column_major(vocab_size: usize, num_topics: usize, data: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || num_topics == 0 {
            return Err(Error::invalid("topic matrix dimensions must be positive"));
        }
        if data.len() != vocab_size * num_topics {
            return Err(Error::DimensionMismatch {
                expected: vocab_size * num_topics,
                got: data.len(),
            });
        }
        Ok(Self {
            vocab_size,
            num_topics,
            data,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn num_topics(&self) -> usize {
        self.num_topics
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.vocab_size)
    }

    pub fn get(&self, word: usize, topic: usize) -> f64 {
        self.data[topic * self.vocab_size + word]
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    /// Largest deviation of any column sum from 1.
    pub fn max_column_sum_error(&self) -> f64 {
        self.columns()
            .map(|c| (c.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, topics: &[usize]) -> Result<Self> {
        Self::from_columns(topics.iter().map(|&k| self.column(k).to_vec()).collect())
    }
}
