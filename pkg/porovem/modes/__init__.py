"""Run modes: each module exports get_modes() -> List[ModeEntry]."""
