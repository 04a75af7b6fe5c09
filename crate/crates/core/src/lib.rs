//! Invasion-front characteristics for one-dimensional parabolic systems
//! u_t = P(∂x)u + f(u).

pub mod linalg;
pub mod polymat;
pub mod doubleroot;
pub mod models;
pub mod spreading;
pub mod wavetrain;
pub mod simulate;
pub mod frontbvp;
pub mod cli;
