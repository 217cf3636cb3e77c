# Core domain types
