"""Domain services: world, dataset, encoder, agents, engine and analysis."""
