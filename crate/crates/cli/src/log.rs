//! Minimal stderr logger controlled by `RECOVERA_LOG`
//! (error | warn | info | debug; default warn).

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error,
    Warn,
    Info,
    Debug,
}

pub struct Logger {
    level: Level,
}

impl Logger {
    pub fn from_env() -> Self {
        let level = match std::env::var("RECOVERA_LOG").as_deref() {
            Ok("error") => Level::Error,
            Ok("info") => Level::Info,
            Ok("debug") => Level::Debug,
            _ => Level::Warn,
        };
        Logger { level }
    }

    fn log(&self, level: Level, tag: &str, msg: fmt::Arguments<'_>) {
        if level <= self.level {
            eprintln!("{tag}: {msg}");
        }
    }

    pub fn warn(&self, msg: fmt::Arguments<'_>) {
        self.log(Level::Warn, "warn", msg);
    }

    pub fn info(&self, msg: fmt::Arguments<'_>) {
        self.log(Level::Info, "info", msg);
    }

    #[allow(dead_code)]
    pub fn debug(&self, msg: fmt::Arguments<'_>) {
        self.log(Level::Debug, "debug", msg);
    }
}
