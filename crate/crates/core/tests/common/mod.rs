pub mod gnn;
