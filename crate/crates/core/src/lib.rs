//! Similarity-based rewards for function-calling generations, top-k
//! distillation losses with analytic gradients, and group-relative policy
//! optimization, plus a small trainer that exercises all three.

pub mod chat_format;
pub mod divergence;
pub mod gradcheck;
pub mod grpo;
pub mod reward;
pub mod similarity;
pub mod toy_trainer;
pub mod value;

pub use chat_format::{
    parse_generation, validate_format, FormatViolation, ParsedGeneration, ToolCall, ToolSchema,
};
pub use reward::{total_reward, RewardBreakdown, RewardError};
pub use value::TypedValue;
