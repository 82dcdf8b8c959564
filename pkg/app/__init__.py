# Crossover design toolkit
