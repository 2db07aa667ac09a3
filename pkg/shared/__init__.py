"""Shared configuration, errors, random streams and artifact utilities."""
