pub mod dumps;
pub mod oracle;
