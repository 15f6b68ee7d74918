//! Two-stage training: the waypoint generator first, then the pixel generator.

pub mod config;
pub mod optim;
pub mod trainer;

pub use config::TrainConfig;
pub use optim::{ema_update, lr_schedule, optimizer_step, AdamConfig, AdamState, EmaShadow};
pub use trainer::{
    load_pixel_models, load_store, load_waypoint_generator, projection_checkpoint, read_projection, waypoint_targets,
    fit, PixelTrainer, Stage, StepRecord, WaypointTrainer, PIXEL_KIND, PROJECTION_KIND, WAYPOINTS_KIND,
};
