# CLI modules for the knowledge tracing toolkit
