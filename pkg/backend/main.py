import logging

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from config import LOG_LEVEL
from routes import repair_routes
from routes.evaluation_routes import router as evaluation_router

logging.basicConfig(level=getattr(logging, LOG_LEVEL.upper(), logging.INFO))

# Initialize FastAPI application
app = FastAPI(title="Group-Blind Repair Backend")

# CORS middleware to allow browser clients
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Register route modules
app.include_router(repair_routes.router)
app.include_router(evaluation_router)


# Health check endpoint
@app.get("/", tags=["Health"])
def health_check():
    """API health check"""
    return {
        "status": "healthy",
        "message": "Group-blind repair API is running",
        "version": "1.0.0"
    }
