# Budget safety checks
